//! k-means++ / Lloyd clustering, the pre-segmentation baseline.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{LabelMap, PointCloud};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct KmeansResult {
    pub labels: LabelMap,
    /// `k × d`, row-major.
    pub centroids: Vec<f64>,
    pub dim: usize,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after initialization and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    /// Clusters that went empty at some iteration and were reseeded.
    pub reseeded: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KmeansOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop when the relative inertia change drops below this.
    pub tol: f64,
}

impl KmeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest id on ties.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Recomputes the sum of squared distances from every point to its own
/// centroid.
pub fn inertia_of(features: &[f64], dim: usize, labels: &[usize], centroids: &[f64]) -> f64 {
    features
        .chunks_exact(dim)
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l * dim..(l + 1) * dim]))
        .sum()
}

/// Clusters the rows of an `N×d` matrix.
pub fn kmeans(features: &[f64], dim: usize, opts: &KmeansOptions) -> Result<KmeansResult> {
    if dim == 0 || !features.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch(alloc::format!(
            "feature matrix of length {} is not N×{dim}",
            features.len()
        )));
    }
    let n = features.len() / dim;
    let k = opts.k;
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let row = |i: usize| &features[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // k-means++ seeding.
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // All remaining points coincide with a centroid.
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(row(pick));
        let c = &centroids[centroids.len() - dim..];
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), c));
        }
    }

    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let assign = |centroids: &[f64], labels: &mut [usize], dists: &mut [f64]| {
        for i in 0..n {
            let (c, d) = nearest(row(i), centroids, dim);
            labels[i] = c;
            dists[i] = d;
        }
    };
    assign(&centroids, &mut labels, &mut dists);
    let mut inertia: f64 = dists.iter().sum();
    let mut history = vec![inertia];
    let mut reseeded = Vec::new();
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        // Update step.
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i] * dim..(labels[i] + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        // Assignment step.
        assign(&centroids, &mut labels, &mut dists);
        // Reseed empty clusters at the point farthest from its centroid.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                let mut far: Option<usize> = None;
                for i in 0..n {
                    if counts[labels[i]] > 1 && far.is_none_or(|f| dists[i] > dists[f]) {
                        far = Some(i);
                    }
                }
                // n >= k guarantees a cluster with more than one member.
                let far = far.expect("a shared cluster exists");
                counts[labels[far]] -= 1;
                counts[c] = 1;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(row(far));
                labels[far] = c;
                dists[far] = 0.0;
                reseeded.push(c);
            }
        }
        let next: f64 = dists.iter().sum();
        history.push(next);
        let change = (inertia - next).abs() / inertia.max(f64::MIN_POSITIVE);
        inertia = next;
        if change < opts.tol {
            break;
        }
    }

    Ok(KmeansResult {
        labels: LabelMap::new(labels, k)?,
        centroids,
        dim,
        inertia,
        iterations,
        inertia_history: history,
        reseeded,
    })
}

/// Per-point `(x, y, z, nx, ny, nz)` with each 3-column block centered and
/// scaled to unit RMS norm.
pub fn pipeline_features(cloud: &PointCloud) -> Result<Vec<f64>> {
    let normals = cloud.require_normals()?;
    let n = cloud.len();
    let mut out = vec![0.0; n * 6];
    for (block, data) in [(0usize, cloud.positions()), (1, normals)] {
        let mean = crate::math::centroid(data);
        let rms = libm::sqrt(data.iter().map(|p| crate::math::dist2(*p, mean)).sum::<f64>() / n as f64);
        let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
        for (i, p) in data.iter().enumerate() {
            for a in 0..3 {
                out[i * 6 + block * 3 + a] = (p[a] - mean[a]) * scale;
            }
        }
    }
    Ok(out)
}
