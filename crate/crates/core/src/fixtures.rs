//! Synthetic point clouds with known part membership, used by the test
//! suites and bundled as example inputs.
//!
//! Every generator attaches analytic unit normals and is deterministic for a
//! given seed.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{dist2, normalize};
use crate::types::{LabelMap, Point3, PointCloud};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw by Box-Muller.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}

/// Uniform direction on the unit sphere.
pub fn unit_vector<R: Rng>(rng: &mut R) -> Point3 {
    let z = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let r = libm::sqrt((1.0 - z * z).max(0.0));
    [r * libm::cos(phi), r * libm::sin(phi), z]
}

/// Regular `nx × ny` grid on the plane `z = 0` with normals `+z`.
pub fn plane_grid(nx: usize, ny: usize, spacing: f64) -> PointCloud {
    let mut pts = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            pts.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
        }
    }
    let normals = vec![[0.0, 0.0, 1.0]; pts.len()];
    PointCloud::new(pts, Some(normals), "plane").expect("valid plane")
}

/// Two `side × side` grids at `z = 0` and `z = gap`.
pub fn parallel_planes(side: usize, spacing: f64, gap: f64) -> (PointCloud, LabelMap) {
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (part, z) in [(0, 0.0), (1, gap)] {
        for i in 0..side {
            for j in 0..side {
                pts.push([i as f64 * spacing, j as f64 * spacing, z]);
                truth.push(part);
            }
        }
    }
    let normals = vec![[0.0, 0.0, 1.0]; pts.len()];
    (
        PointCloud::new(pts, Some(normals), "parallel-planes").expect("valid planes"),
        LabelMap::from_labels(truth),
    )
}

/// Jittered grid of `count` cells on the unit square, returned as `(u, v)`.
fn jittered_square<R: Rng>(count: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let nu = libm::round(libm::sqrt(count as f64)).max(1.0) as usize;
    let nv = count.div_ceil(nu);
    let (su, sv) = (1.0 / nu as f64, 1.0 / nv as f64);
    (0..count)
        .map(|c| {
            let (iu, iv) = (c % nu, c / nu);
            let ju = 0.6 * (rng.random::<f64>() - 0.5);
            let jv = 0.6 * (rng.random::<f64>() - 0.5);
            ((iu as f64 + 0.5 + ju) * su, (iv as f64 + 0.5 + jv) * sv)
        })
        .collect()
}

/// Two unit half-planes meeting at 90° along the `y` axis: part 0 lies in
/// `z = 0` (normal `+z`), part 1 in `x = 0` (normal `+x`). Points sit on a
/// jittered grid, `n / 2` per plane.
pub fn dihedral(n: usize, seed: u64) -> (PointCloud, LabelMap) {
    let mut rng = rng(seed);
    let half = n / 2;
    let mut pts = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (u, v) in jittered_square(half, &mut rng) {
        pts.push([u, v, 0.0]);
        normals.push([0.0, 0.0, 1.0]);
        truth.push(0);
    }
    for (u, v) in jittered_square(n - half, &mut rng) {
        pts.push([0.0, v, u]);
        normals.push([1.0, 0.0, 0.0]);
        truth.push(1);
    }
    (
        PointCloud::new(pts, Some(normals), "dihedral").expect("valid dihedral"),
        LabelMap::from_labels(truth),
    )
}

/// Uniform samples on the unit sphere; normals equal positions.
pub fn sphere(n: usize, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    let pts: Vec<Point3> = (0..n).map(|_| unit_vector(&mut rng)).collect();
    PointCloud::new(pts.clone(), Some(pts), "sphere").expect("valid sphere")
}

/// Uniform samples in the unit cube, no normals.
pub fn uniform_cube(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = rng(seed);
    (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
}

/// Geometry of the three-part figure (head, body, base), z up.
pub mod figure {
    pub const HEAD: usize = 0;
    pub const BODY: usize = 1;
    pub const BASE: usize = 2;

    /// Half extents of the base and the rounding radius of its edges.
    pub const BASE_HALF: [f64; 3] = [0.8, 0.8, 0.35];
    pub const BASE_ROUNDING: f64 = 0.3;
    pub const BODY_RADIUS: f64 = 0.3;
    pub const BODY_HEIGHT: f64 = 0.8;
    pub const HEAD_RADIUS: f64 = 0.5;

    pub fn base_top() -> f64 {
        2.0 * BASE_HALF[2]
    }

    /// Height where the body meets the head.
    pub fn neck() -> f64 {
        base_top() + BODY_HEIGHT
    }

    pub fn head_center() -> f64 {
        neck() + libm::sqrt(HEAD_RADIUS * HEAD_RADIUS - BODY_RADIUS * BODY_RADIUS)
    }
}

/// Surface patch of a rounded box (`core` half extents, rounding `r`).
#[derive(Clone, Copy)]
enum BoxPiece {
    Face { axis: usize, sign: f64 },
    Edge { axis: usize, s1: f64, s2: f64 },
    Corner { signs: [f64; 3] },
}

fn rounded_box_pieces(core: [f64; 3], r: f64) -> Vec<(BoxPiece, f64)> {
    let mut pieces = Vec::new();
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [-1.0, 1.0] {
            pieces.push((BoxPiece::Face { axis, sign }, 4.0 * core[b] * core[c]));
        }
        for s1 in [-1.0, 1.0] {
            for s2 in [-1.0, 1.0] {
                pieces.push((BoxPiece::Edge { axis, s1, s2 }, 2.0 * core[axis] * FRAC_PI_2 * r));
            }
        }
    }
    for s0 in [-1.0, 1.0] {
        for s1 in [-1.0, 1.0] {
            for s2 in [-1.0, 1.0] {
                pieces.push((BoxPiece::Corner { signs: [s0, s1, s2] }, PI * r * r / 2.0));
            }
        }
    }
    pieces
}

fn sample_box_piece<R: Rng>(piece: BoxPiece, core: [f64; 3], r: f64, rng: &mut R) -> (Point3, Point3) {
    let mut q = [0.0; 3];
    let mut n = [0.0; 3];
    match piece {
        BoxPiece::Face { axis, sign } => {
            for a in 0..3 {
                q[a] = core[a] * (2.0 * rng.random::<f64>() - 1.0);
            }
            q[axis] = sign * core[axis];
            n[axis] = sign;
        }
        BoxPiece::Edge { axis, s1, s2 } => {
            let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
            q[axis] = core[axis] * (2.0 * rng.random::<f64>() - 1.0);
            q[b] = s1 * core[b];
            q[c] = s2 * core[c];
            let phi = FRAC_PI_2 * rng.random::<f64>();
            n[b] = s1 * libm::cos(phi);
            n[c] = s2 * libm::sin(phi);
        }
        BoxPiece::Corner { signs } => {
            let u = unit_vector(rng);
            for a in 0..3 {
                q[a] = signs[a] * core[a];
                n[a] = signs[a] * u[a].abs();
            }
        }
    }
    ([q[0] + r * n[0], q[1] + r * n[1], q[2] + r * n[2]], n)
}

/// Oversampling factor of the candidate draw thinned by farthest-point
/// sampling in [`three_part_figure`].
pub const FIGURE_OVERSAMPLE: usize = 8;

/// A sphere head on a cylinder body on a rounded box base. Part labels
/// follow [`figure`].
///
/// Points are spread evenly, like the vertices of a scanned mesh: an
/// area-uniform draw of `FIGURE_OVERSAMPLE·n` candidates over the visible
/// surface is thinned to `n` by farthest-point sampling. The head meets the
/// body at a ~53° crease and the body meets the base at 90°; everything else
/// is smooth at the sampling scale.
pub fn three_part_figure(n: usize, seed: u64) -> (PointCloud, LabelMap) {
    let (dense, truth) = three_part_figure_uniform(FIGURE_OVERSAMPLE * n, seed);
    let keep = crate::sampling::farthest_point_sampling(&dense, n);
    let labels = keep.iter().map(|&i| truth.get(i)).collect();
    (
        dense.select(&keep).expect("indices in range"),
        LabelMap::from_labels(labels),
    )
}

/// The three-part figure with `n` independent area-uniform samples.
pub fn three_part_figure_uniform(n: usize, seed: u64) -> (PointCloud, LabelMap) {
    use figure::*;
    let mut rng = rng(seed);
    let r = BASE_ROUNDING;
    let core = [BASE_HALF[0] - r, BASE_HALF[1] - r, BASE_HALF[2] - r];
    let base_center = [0.0, 0.0, BASE_HALF[2]];
    let top = base_top();
    let neck = neck();
    let head_z = head_center();

    // (part, piece, area): part pieces 0 = head, 1 = body, 2.. = base.
    let mut pieces: Vec<(usize, Option<BoxPiece>, f64)> = vec![
        (HEAD, None, 4.0 * PI * HEAD_RADIUS * HEAD_RADIUS),
        (BODY, None, 2.0 * PI * BODY_RADIUS * BODY_HEIGHT),
    ];
    for (piece, area) in rounded_box_pieces(core, r) {
        pieces.push((BASE, Some(piece), area));
    }
    let total: f64 = pieces.iter().map(|p| p.2).sum();

    let mut pts = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    while pts.len() < n {
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = pieces.len() - 1;
        for (i, p) in pieces.iter().enumerate() {
            if pick < p.2 {
                chosen = i;
                break;
            }
            pick -= p.2;
        }
        let (part, piece, _) = pieces[chosen];
        let (p, nrm) = match (part, piece) {
            (HEAD, _) => {
                let u = unit_vector(&mut rng);
                let p = [HEAD_RADIUS * u[0], HEAD_RADIUS * u[1], head_z + HEAD_RADIUS * u[2]];
                if p[2] < neck {
                    continue;
                }
                (p, u)
            }
            (BODY, _) => {
                let phi = 2.0 * PI * rng.random::<f64>();
                let (c, s) = (libm::cos(phi), libm::sin(phi));
                let z = top + BODY_HEIGHT * rng.random::<f64>();
                ([BODY_RADIUS * c, BODY_RADIUS * s, z], [c, s, 0.0])
            }
            (_, Some(piece)) => {
                let (q, nrm) = sample_box_piece(piece, core, r, &mut rng);
                let p = [q[0] + base_center[0], q[1] + base_center[1], q[2] + base_center[2]];
                let hidden = nrm[2] == 1.0 && p[0] * p[0] + p[1] * p[1] < BODY_RADIUS * BODY_RADIUS;
                if hidden {
                    continue;
                }
                (p, nrm)
            }
            _ => unreachable!(),
        };
        let nrm = normalize(nrm).expect("unit normal");
        pts.push(p);
        normals.push(nrm);
        truth.push(part);
    }
    (
        PointCloud::new(pts, Some(normals), "three-part-figure").expect("valid figure"),
        LabelMap::from_labels(truth),
    )
}

/// Isotropic Gaussian blobs around `centers`, `per_blob` points each.
pub fn gaussian_blobs(centers: &[Point3], per_blob: usize, sigma: f64, seed: u64) -> (Vec<Point3>, LabelMap) {
    let mut rng = rng(seed);
    let mut pts = Vec::with_capacity(centers.len() * per_blob);
    let mut truth = Vec::with_capacity(centers.len() * per_blob);
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            pts.push([
                c[0] + sigma * gaussian(&mut rng),
                c[1] + sigma * gaussian(&mut rng),
                c[2] + sigma * gaussian(&mut rng),
            ]);
            truth.push(b);
        }
    }
    (pts, LabelMap::from_labels(truth))
}

/// Splits every part into Voronoi cells around random member seeds;
/// `cells[p]` cells for part `p`. Returned ids are compacted.
pub fn oversegment(cloud: &PointCloud, truth: &LabelMap, cells: &[usize], seed: u64) -> LabelMap {
    let mut rng = rng(seed);
    let members = truth.members();
    let pts = cloud.positions();
    let mut out = vec![0usize; cloud.len()];
    let mut next = 0;
    for (part, idx) in members.iter().enumerate() {
        let count = cells.get(part).copied().unwrap_or(1).clamp(1, idx.len().max(1));
        let seeds: Vec<usize> = rand::seq::index::sample(&mut rng, idx.len(), count)
            .into_iter()
            .map(|s| idx[s])
            .collect();
        for &i in idx {
            let mut best = 0;
            for (s, &si) in seeds.iter().enumerate() {
                if dist2(pts[i], pts[si]) < dist2(pts[i], pts[seeds[best]]) {
                    best = s;
                }
            }
            out[i] = next + best;
        }
        next += count;
    }
    LabelMap::compacted(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_has_three_parts_and_unit_normals() {
        let (cloud, truth) = three_part_figure(2048, 1);
        assert_eq!(cloud.len(), 2048);
        assert!(cloud.validate().is_ok());
        let counts = truth.counts();
        assert_eq!(counts.len(), 3);
        assert!(counts.iter().all(|&c| c > 150), "{counts:?}");
    }

    #[test]
    fn figure_is_deterministic() {
        assert_eq!(three_part_figure(300, 4), three_part_figure(300, 4));
    }

    #[test]
    fn dihedral_counts() {
        let (cloud, truth) = dihedral(4000, 0);
        assert_eq!(cloud.len(), 4000);
        assert_eq!(truth.counts(), vec![2000, 2000]);
    }

    #[test]
    fn oversegment_respects_parts() {
        let (cloud, truth) = dihedral(400, 2);
        let over = oversegment(&cloud, &truth, &[3, 4], 9);
        assert_eq!(over.k(), 7);
        for members in over.members() {
            let part = truth.get(members[0]);
            assert!(members.iter().all(|&i| truth.get(i) == part));
        }
    }
}
