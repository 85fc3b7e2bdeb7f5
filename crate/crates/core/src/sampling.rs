//! Downsampling to the working cloud size.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::dist2;
use crate::types::PointCloud;

pub const DEFAULT_DOWNSAMPLE_N: usize = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DownsampleMethod {
    /// Uniform draw without replacement.
    #[default]
    Random,
    /// Farthest-point sampling from point 0.
    Fps,
}

impl core::str::FromStr for DownsampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "fps" => Ok(Self::Fps),
            other => Err(Error::InvalidParam(alloc::format!(
                "unknown downsample method `{other}`"
            ))),
        }
    }
}

impl core::fmt::Display for DownsampleMethod {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Fps => "fps",
        })
    }
}

/// Indices kept by [`downsample`], in output order.
pub fn downsample_indices(cloud: &PointCloud, n: usize, method: DownsampleMethod, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidParam("downsample size must be >= 1".into()));
    }
    if n >= cloud.len() {
        return Ok((0..cloud.len()).collect());
    }
    Ok(match method {
        DownsampleMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, cloud.len(), n).into_vec();
            idx.sort_unstable();
            idx
        }
        DownsampleMethod::Fps => farthest_point_sampling(cloud, n),
    })
}

/// Keeps `n` points; a cloud with at most `n` points is returned unchanged.
/// Random draws keep the original point order.
pub fn downsample(cloud: &PointCloud, n: usize, method: DownsampleMethod, seed: u64) -> Result<PointCloud> {
    if n >= cloud.len() && n > 0 {
        return Ok(cloud.clone());
    }
    cloud.select(&downsample_indices(cloud, n, method, seed)?)
}

/// Greedy max-min selection seeded at index 0; ties go to the lowest index.
pub fn farthest_point_sampling(cloud: &PointCloud, n: usize) -> Vec<usize> {
    let pts = cloud.positions();
    let n = n.min(pts.len());
    let mut selected = Vec::with_capacity(n);
    if n == 0 {
        return selected;
    }
    let mut min_d2: Vec<f64> = pts.iter().map(|p| dist2(*p, pts[0])).collect();
    selected.push(0);
    while selected.len() < n {
        let mut best = 0;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > min_d2[best] {
                best = i;
            }
        }
        selected.push(best);
        for (i, p) in pts.iter().enumerate() {
            let d = dist2(*p, pts[best]);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }
    selected
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid(side: usize) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..side {
            for j in 0..side {
                pts.push([i as f64 / (side - 1) as f64, j as f64 / (side - 1) as f64, 0.0]);
            }
        }
        PointCloud::from_positions(pts).unwrap()
    }

    #[test]
    fn small_cloud_is_unchanged() {
        let cloud = grid(3).select(&[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(downsample(&cloud, 5, DownsampleMethod::Random, 1).unwrap(), cloud);
        assert_eq!(downsample(&cloud, 9, DownsampleMethod::Fps, 1).unwrap(), cloud);
    }

    #[test]
    fn fps_pair_realizes_max_distance_from_seed() {
        let cloud = grid(10);
        let idx = farthest_point_sampling(&cloud, 2);
        assert_eq!(idx[0], 0);
        let pts = cloud.positions();
        // Brute force: the largest distance over all pairs containing point 0.
        let best = (1..pts.len()).map(|j| dist2(pts[0], pts[j])).fold(0.0, f64::max);
        assert_eq!(dist2(pts[0], pts[idx[1]]), best);
        assert_eq!(pts[idx[1]], [1.0, 1.0, 0.0]);
    }

    #[test]
    fn random_is_deterministic_subset() {
        let cloud = grid(10);
        let a = downsample_indices(&cloud, 10, DownsampleMethod::Random, 42).unwrap();
        let b = downsample_indices(&cloud, 10, DownsampleMethod::Random, 42).unwrap();
        assert_eq!(a, b);
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 10);
        let sub = downsample(&cloud, 10, DownsampleMethod::Random, 42).unwrap();
        for p in sub.positions() {
            assert!(cloud.positions().contains(p));
        }
    }

    #[test]
    fn normals_follow_points() {
        let (cloud, _) = crate::fixtures::dihedral(100, 0);
        let idx = downsample_indices(&cloud, 7, DownsampleMethod::Fps, 0).unwrap();
        let sub = cloud.select(&idx).unwrap();
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(sub.normals().unwrap()[k], cloud.normals().unwrap()[i]);
        }
    }

    #[test]
    fn zero_is_rejected() {
        let cloud = grid(3);
        assert!(downsample(&cloud, 0, DownsampleMethod::Random, 0).is_err());
        assert!(vec![1].len() == 1);
    }
}
