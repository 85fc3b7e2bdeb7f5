//! Shared domain types: point clouds, label maps and KNN graphs.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Tolerance on `|‖n‖ − 1|` for attached normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// Checks positions and (optional) normals against the point-cloud invariants.
pub fn validate_cloud(positions: &[Point3], normals: Option<&[Point3]>) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if let Some(index) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::NonFinite { index });
    }
    if let Some(normals) = normals {
        if normals.len() != positions.len() {
            return Err(Error::LengthMismatch {
                expected: positions.len(),
                found: normals.len(),
            });
        }
        for (index, n) in normals.iter().enumerate() {
            if n.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite { index });
            }
            let norm = crate::math::norm(*n);
            if (norm - 1.0).abs() > NORMAL_TOLERANCE {
                return Err(Error::NormalLengthViolation { index, norm });
            }
        }
    }
    Ok(())
}

/// Per-point positions with optional unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3>,
    normals: Option<Vec<Point3>>,
    source_id: String,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>, normals: Option<Vec<Point3>>, source_id: impl Into<String>) -> Result<Self> {
        validate_cloud(&positions, normals.as_deref())?;
        Ok(Self {
            positions,
            normals,
            source_id: source_id.into(),
        })
    }

    pub fn from_positions(positions: Vec<Point3>) -> Result<Self> {
        Self::new(positions, None, "")
    }

    /// Re-checks the invariants. Always `Ok` for a constructed cloud.
    pub fn validate(&self) -> Result<()> {
        validate_cloud(&self.positions, self.normals.as_deref())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn with_normals(self, normals: Vec<Point3>) -> Result<Self> {
        Self::new(self.positions, Some(normals), self.source_id)
    }

    pub fn without_normals(self) -> Self {
        Self { normals: None, ..self }
    }

    pub fn with_source_id(self, source_id: impl Into<String>) -> Self {
        Self {
            source_id: source_id.into(),
            ..self
        }
    }

    /// Sub-cloud made of the given point indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let positions = indices.iter().map(|&i| self.positions[i]).collect();
        let normals = self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect());
        Self::new(positions, normals, self.source_id.clone())
    }

    /// Normals or [`Error::MissingNormals`].
    pub fn require_normals(&self) -> Result<&[Point3]> {
        self.normals().ok_or(Error::MissingNormals)
    }
}

/// One dense label per point.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    labels: Vec<usize>,
    k: usize,
}

impl LabelMap {
    /// Labels with an explicit slot count `k`; every label must be `< k`.
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, k });
        }
        Ok(Self { labels, k })
    }

    /// Labels with `k = max + 1` (0 for an empty map).
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Self { labels, k }
    }

    /// Relabels arbitrary ids to `0..K` in order of first occurrence.
    pub fn compacted<I: IntoIterator<Item = usize>>(ids: I) -> Self {
        let mut mapping: alloc::collections::BTreeMap<usize, usize> = Default::default();
        let labels: Vec<usize> = ids
            .into_iter()
            .map(|id| {
                let next = mapping.len();
                *mapping.entry(id).or_insert(next)
            })
            .collect();
        Self {
            k: mapping.len(),
            labels,
        }
    }

    /// Same map, compacted by first occurrence.
    pub fn compact(&self) -> Self {
        Self::compacted(self.labels.iter().copied())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn num_distinct(&self) -> usize {
        self.labels.iter().collect::<BTreeSet<_>>().len()
    }

    /// Point count per label slot.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Member point indices per label slot.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        members
    }

    /// True when labels are exactly `0..K` with every slot used.
    pub fn is_dense(&self) -> bool {
        self.counts().iter().all(|&c| c > 0)
    }

    /// Checks the invariants against the owning cloud's size.
    pub fn check(&self, n: usize) -> Result<()> {
        if self.labels.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: self.labels.len(),
            });
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.k) {
            return Err(Error::LabelOutOfRange { label, k: self.k });
        }
        Ok(())
    }
}

/// Asserts that a label map produced anywhere in the pipeline is well formed
/// and dense. Used by tests across modules.
pub fn assert_label_map(labels: &LabelMap, n: usize) {
    labels.check(n).expect("label map invariants");
    assert!(labels.is_dense(), "label map is not dense: {:?}", labels.counts());
}

/// Fixed-k nearest-neighbor adjacency, self excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    k: usize,
    neighbors: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborGraph {
    /// Builds a graph from flat row-major `N×k` arrays and checks invariants.
    pub fn new(k: usize, neighbors: Vec<usize>, distances: Vec<f64>) -> Result<Self> {
        if k == 0 || !neighbors.len().is_multiple_of(k) || distances.len() != neighbors.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "graph arrays of length {} / {} are not N×{k}",
                neighbors.len(),
                distances.len()
            )));
        }
        let graph = Self {
            k,
            neighbors,
            distances,
        };
        graph.check()?;
        Ok(graph)
    }

    pub(crate) fn from_raw(k: usize, neighbors: Vec<usize>, distances: Vec<f64>) -> Self {
        debug_assert_eq!(neighbors.len(), distances.len());
        Self {
            k,
            neighbors,
            distances,
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            let row = self.row(i);
            let dist = self.distances_row(i);
            for (slot, &j) in row.iter().enumerate() {
                if j >= n || j == i {
                    return Err(Error::InvalidParam(alloc::format!("row {i} has invalid neighbor {j}")));
                }
                if dist[slot].is_nan() || dist[slot] < 0.0 || (slot > 0 && dist[slot] < dist[slot - 1]) {
                    return Err(Error::InvalidParam(alloc::format!(
                        "row {i} distances are not nondecreasing"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of points (rows).
    pub fn len(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn distances_row(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    pub fn neighbors_flat(&self) -> &[usize] {
        &self.neighbors
    }

    /// Undirected adjacency: `i ~ j` iff `j ∈ nbr(i)` or `i ∈ nbr(j)`.
    /// Each list is sorted ascending without duplicates.
    pub fn symmetrized(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for &j in self.row(i) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}
