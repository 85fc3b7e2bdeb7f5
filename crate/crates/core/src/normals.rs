//! Per-point normals from neighborhood PCA.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{centroid, dot, sub};
use crate::types::{NeighborGraph, Point3, PointCloud};

/// Symmetric 3×3 matrix stored as its six unique entries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl Sym3 {
    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Sym3 {
            xx: a,
            yy: b,
            zz: c,
            ..Default::default()
        }
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    /// Row-major flattening to nine values.
    pub fn to_array9(&self) -> [f64; 9] {
        [
            self.xx, self.xy, self.xz, self.xy, self.yy, self.yz, self.xz, self.yz, self.zz,
        ]
    }

    /// Symmetrizes a full matrix by averaging off-diagonal pairs.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Self {
        Sym3 {
            xx: m[0][0],
            xy: 0.5 * (m[0][1] + m[1][0]),
            xz: 0.5 * (m[0][2] + m[2][0]),
            yy: m[1][1],
            yz: 0.5 * (m[1][2] + m[2][1]),
            zz: m[2][2],
        }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn mul_vec(&self, v: Point3) -> Point3 {
        let m = self.to_matrix();
        [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.to_array9().iter().map(|v| v * v).sum())
    }

    /// Eigenvalues ascending with matching unit eigenvectors, by cyclic
    /// Jacobi rotations.
    pub fn eigen(&self) -> ([f64; 3], [Point3; 3]) {
        let mut a = self.to_matrix();
        let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for _sweep in 0..64 {
            let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
            let scale = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2] + off;
            if off <= 1e-36 * scale || off == 0.0 {
                break;
            }
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (row_p, row_q) = (a[p], a[q]);
                for k in 0..3 {
                    a[p][k] = c * row_p[k] - s * row_q[k];
                    a[q][k] = s * row_p[k] + c * row_q[k];
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]).then(i.cmp(&j)));
        let values = order.map(|i| a[i][i]);
        let vectors = order.map(|i| [v[0][i], v[1][i], v[2][i]]);
        (values, vectors)
    }
}

/// Population covariance `(1/m) Σ (p − μ)(p − μ)ᵀ` of a point subset.
pub fn neighborhood_covariance(points: &[Point3]) -> Sym3 {
    if points.is_empty() {
        return Sym3::default();
    }
    let mu = centroid(points);
    let mut c = Sym3::default();
    for p in points {
        let d = sub(*p, mu);
        c.xx += d[0] * d[0];
        c.xy += d[0] * d[1];
        c.xz += d[0] * d[2];
        c.yy += d[1] * d[1];
        c.yz += d[1] * d[2];
        c.zz += d[2] * d[2];
    }
    let inv = 1.0 / points.len() as f64;
    Sym3 {
        xx: c.xx * inv,
        xy: c.xy * inv,
        xz: c.xz * inv,
        yy: c.yy * inv,
        yz: c.yz * inv,
        zz: c.zz * inv,
    }
}

/// Covariance over point `i` and its graph neighbors.
pub fn point_covariance(points: &[Point3], graph: &NeighborGraph, i: usize) -> Sym3 {
    let mut subset = Vec::with_capacity(graph.k() + 1);
    subset.push(points[i]);
    subset.extend(graph.row(i).iter().map(|&j| points[j]));
    neighborhood_covariance(&subset)
}

/// Smallest-eigenvalue direction of a covariance matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmallestEigen {
    pub vector: Point3,
    pub value: f64,
    /// The two smallest eigenvalues coincide; `vector` is any unit vector of
    /// the shared eigenplane.
    pub degenerate: bool,
}

pub fn smallest_eigenvector(c: &Sym3) -> SmallestEigen {
    let (values, vectors) = c.eigen();
    let mut v = vectors[0];
    let n = crate::math::norm(v);
    v = crate::math::scale(v, 1.0 / n);
    // Canonical sign: largest-magnitude component positive.
    let mut big = 0;
    for a in 1..3 {
        if v[a].abs() > v[big].abs() {
            big = a;
        }
    }
    if v[big] < 0.0 {
        v = crate::math::scale(v, -1.0);
    }
    SmallestEigen {
        vector: v,
        value: values[0],
        degenerate: values[1] - values[0] <= 1e-12 * c.trace().abs(),
    }
}

/// Normals attached to a cloud, with the points whose neighborhood spectrum
/// was degenerate.
#[derive(Clone, Debug)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    pub degenerate: Vec<usize>,
}

/// PCA normals over `{i} ∪ nbr(i)`, oriented away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, graph: &NeighborGraph) -> Result<NormalEstimate> {
    if graph.k() < 3 {
        return Err(Error::InvalidParam(alloc::format!(
            "normal estimation needs k >= 3, got {}",
            graph.k()
        )));
    }
    if graph.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            found: graph.len(),
        });
    }
    let points = cloud.positions();
    let center = centroid(points);
    let mut normals = Vec::with_capacity(points.len());
    let mut degenerate = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let eig = smallest_eigenvector(&point_covariance(points, graph, i));
        if eig.degenerate {
            degenerate.push(i);
        }
        let mut n = eig.vector;
        if dot(n, sub(*p, center)) < 0.0 {
            n = crate::math::scale(n, -1.0);
        }
        normals.push(n);
    }
    Ok(NormalEstimate {
        cloud: cloud.clone().with_normals(normals)?,
        degenerate,
    })
}
