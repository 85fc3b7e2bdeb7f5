//! Seed region growing and cluster-count reduction.
//!
//! Regions start at uniformly random unassigned points and grow breadth-first
//! across the KNN graph. A neighbor joins when it is within `d_max` of the
//! point that reached it and their normals are within `theta_max` of each
//! other, ignoring normal sign.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{dist2, dot};
use crate::types::{LabelMap, NeighborGraph, Point3, PointCloud};

pub const DEFAULT_THETA_MAX_DEG: f64 = 20.0;
pub const DEFAULT_TARGET_K: usize = 6;
pub const DEFAULT_MIN_CLUSTER: usize = 10;
/// `d_max` is this multiple of the median nearest-neighbor distance.
pub const AUTO_DISTANCE_FACTOR: f64 = 2.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SrgParams {
    /// Euclidean distance threshold, in model units.
    pub d_max: f64,
    /// Normal angle threshold in radians.
    pub theta_max: f64,
    pub target_k: usize,
    pub min_cluster: usize,
    pub rng_seed: u64,
}

impl SrgParams {
    pub fn validate(&self) -> Result<()> {
        if self.d_max.is_nan() || self.d_max <= 0.0 || !self.d_max.is_finite() {
            return Err(Error::InvalidParam(alloc::format!(
                "d_max must be > 0, got {}",
                self.d_max
            )));
        }
        if !(self.theta_max > 0.0 && self.theta_max <= core::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParam(alloc::format!(
                "theta_max must be in (0, pi/2], got {}",
                self.theta_max
            )));
        }
        if self.target_k == 0 {
            return Err(Error::InvalidParam("target_k must be >= 1".into()));
        }
        Ok(())
    }

    /// The normal-affinity acceptance bound `1 − cos θ_max`.
    pub fn affinity_bound(&self) -> f64 {
        1.0 - libm::cos(self.theta_max)
    }
}

/// Optional user settings; anything left `None` is filled by
/// [`auto_thresholds`] or the documented defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SrgSettings {
    pub d_max: Option<f64>,
    pub theta_max: Option<f64>,
    pub target_k: Option<usize>,
    pub min_cluster: Option<usize>,
    pub rng_seed: u64,
}

impl SrgSettings {
    pub fn resolve(&self, graph: &NeighborGraph) -> Result<SrgParams> {
        let auto = auto_thresholds(graph);
        let params = SrgParams {
            d_max: self.d_max.unwrap_or(auto.d_max),
            theta_max: self.theta_max.unwrap_or(auto.theta_max),
            target_k: self.target_k.unwrap_or(DEFAULT_TARGET_K),
            min_cluster: self.min_cluster.unwrap_or(DEFAULT_MIN_CLUSTER),
            rng_seed: self.rng_seed,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub d_max: f64,
    pub theta_max: f64,
}

/// `d_max = 2.5 × median nearest-neighbor distance` (lower middle for even
/// counts) and `θ_max = 20°`.
pub fn auto_thresholds(graph: &NeighborGraph) -> Thresholds {
    let mut first: Vec<f64> = (0..graph.len()).map(|i| graph.distances_row(i)[0]).collect();
    first.sort_unstable_by(f64::total_cmp);
    let median = if first.is_empty() {
        0.0
    } else {
        first[(first.len() - 1) / 2]
    };
    Thresholds {
        d_max: AUTO_DISTANCE_FACTOR * median,
        theta_max: DEFAULT_THETA_MAX_DEG.to_radians(),
    }
}

/// Sign-invariant normal dissimilarity `1 − |a·b|`.
pub fn normal_affinity(a: Point3, b: Point3) -> f64 {
    (1.0 - dot(a, b).abs()).clamp(0.0, 1.0)
}

/// Grows regions over the whole cloud. Labels are numbered in region creation
/// order.
pub fn grow(cloud: &PointCloud, graph: &NeighborGraph, params: &SrgParams) -> Result<LabelMap> {
    params.validate()?;
    let normals = cloud.require_normals()?;
    let points = cloud.positions();
    let n = points.len();
    if graph.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: graph.len(),
        });
    }
    let d2_max = params.d_max * params.d_max;
    let bound = params.affinity_bound();

    // The first unassigned entry of a uniform shuffle is a uniform draw among
    // the unassigned points.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.rng_seed));

    const UNASSIGNED: usize = usize::MAX;
    let mut labels = vec![UNASSIGNED; n];
    let mut frontier = VecDeque::new();
    let mut region = 0;
    for &seed in &order {
        if labels[seed] != UNASSIGNED {
            continue;
        }
        labels[seed] = region;
        frontier.push_back(seed);
        while let Some(a) = frontier.pop_front() {
            for &b in graph.row(a) {
                if labels[b] == UNASSIGNED
                    && dist2(points[a], points[b]) <= d2_max
                    && normal_affinity(normals[a], normals[b]) <= bound
                {
                    labels[b] = region;
                    frontier.push_back(b);
                }
            }
        }
        region += 1;
    }
    LabelMap::new(labels, region)
}

#[derive(Clone, Debug)]
struct Cluster {
    size: usize,
    normal_sum: Point3,
    position_sum: Point3,
    adjacent: BTreeSet<usize>,
}

impl Cluster {
    fn mean_normal(&self) -> Point3 {
        crate::math::scale(self.normal_sum, 1.0 / self.size as f64)
    }

    fn centroid(&self) -> Point3 {
        crate::math::scale(self.position_sum, 1.0 / self.size as f64)
    }
}

/// Merges clusters until at most `target_k` remain.
///
/// Clusters smaller than `min_cluster` are absorbed first; afterwards the
/// smallest cluster (lowest id on ties) is merged repeatedly. A merged cluster
/// joins the adjacent cluster (symmetrized KNN graph) whose mean normal has
/// the largest `|dot|` with its own, or the nearest cluster by centroid
/// distance when it has no neighbors. Surviving ids are renumbered to
/// `0..K` preserving their relative order.
pub fn merge_to_target(
    cloud: &PointCloud,
    labels: &LabelMap,
    graph: &NeighborGraph,
    target_k: usize,
    min_cluster: usize,
) -> Result<LabelMap> {
    let n = cloud.len();
    labels.check(n)?;
    if graph.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: graph.len(),
        });
    }
    if target_k == 0 {
        return Err(Error::InvalidParam("target_k must be >= 1".into()));
    }
    let normals = cloud.require_normals()?;
    let points = cloud.positions();

    let mut clusters: BTreeMap<usize, Cluster> = BTreeMap::new();
    for i in 0..n {
        let c = clusters.entry(labels.get(i)).or_insert_with(|| Cluster {
            size: 0,
            normal_sum: [0.0; 3],
            position_sum: [0.0; 3],
            adjacent: BTreeSet::new(),
        });
        c.size += 1;
        for a in 0..3 {
            c.normal_sum[a] += normals[i][a];
            c.position_sum[a] += points[i][a];
        }
    }
    for i in 0..n {
        let li = labels.get(i);
        for &j in graph.row(i) {
            let lj = labels.get(j);
            if li != lj {
                clusters.get_mut(&li).unwrap().adjacent.insert(lj);
                clusters.get_mut(&lj).unwrap().adjacent.insert(li);
            }
        }
    }

    let mut by_size: BTreeSet<(usize, usize)> = clusters.iter().map(|(&id, c)| (c.size, id)).collect();
    // Final id of every original id.
    let mut parent: BTreeMap<usize, usize> = clusters.keys().map(|&id| (id, id)).collect();

    while let Some(&(size, victim)) = by_size.first() {
        let over_target = clusters.len() > target_k;
        let too_small = size < min_cluster && clusters.len() > 1;
        if !over_target && !too_small {
            break;
        }
        let into = merge_partner(&clusters, victim);
        let removed = clusters.remove(&victim).unwrap();
        by_size.remove(&(removed.size, victim));
        for &other in &removed.adjacent {
            if let Some(c) = clusters.get_mut(&other) {
                c.adjacent.remove(&victim);
                if other != into {
                    c.adjacent.insert(into);
                }
            }
        }
        let target = clusters.get_mut(&into).unwrap();
        by_size.remove(&(target.size, into));
        target.size += removed.size;
        for a in 0..3 {
            target.normal_sum[a] += removed.normal_sum[a];
            target.position_sum[a] += removed.position_sum[a];
        }
        target
            .adjacent
            .extend(removed.adjacent.iter().copied().filter(|&c| c != into));
        by_size.insert((target.size, into));
        for p in parent.values_mut() {
            if *p == victim {
                *p = into;
            }
        }
    }

    let dense: BTreeMap<usize, usize> = clusters.keys().enumerate().map(|(new, &old)| (old, new)).collect();
    let out = labels.labels().iter().map(|l| dense[&parent[l]]).collect();
    LabelMap::new(out, clusters.len())
}

fn merge_partner(clusters: &BTreeMap<usize, Cluster>, victim: usize) -> usize {
    let c = &clusters[&victim];
    let mean = c.mean_normal();
    let mut best: Option<(f64, usize)> = None;
    for &other in &c.adjacent {
        let score = dot(mean, clusters[&other].mean_normal()).abs();
        // Ascending iteration means strict `>` keeps the lowest id on ties.
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, other));
        }
    }
    if let Some((_, id)) = best {
        return id;
    }
    let center = c.centroid();
    let mut nearest: Option<(f64, usize)> = None;
    for (&other, oc) in clusters {
        if other == victim {
            continue;
        }
        let d = dist2(center, oc.centroid());
        if nearest.is_none_or(|(s, _)| d < s) {
            nearest = Some((d, other));
        }
    }
    nearest.map_or(victim, |(_, id)| id)
}

/// Full SRG stage: grow, then merge down to `params.target_k`.
pub fn segment(cloud: &PointCloud, graph: &NeighborGraph, params: &SrgParams) -> Result<LabelMap> {
    let grown = grow(cloud, graph, params)?;
    merge_to_target(cloud, &grown, graph, params.target_k, params.min_cluster)
}

/// True when every cluster induces a connected subgraph of the symmetrized
/// graph.
pub fn clusters_connected(labels: &LabelMap, graph: &NeighborGraph) -> bool {
    let n = labels.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for &j in graph.row(i) {
            if labels.get(i) == labels.get(j) {
                uf.union(i, j);
            }
        }
    }
    let mut root_of_label: BTreeMap<usize, usize> = BTreeMap::new();
    (0..n).all(|i| {
        let r = uf.find(i);
        *root_of_label.entry(labels.get(i)).or_insert(r) == r
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::spatial::knn_graph;
    use crate::types::assert_label_map;

    fn params(d_max: f64, seed: u64) -> SrgParams {
        SrgParams {
            d_max,
            theta_max: 20f64.to_radians(),
            target_k: DEFAULT_TARGET_K,
            min_cluster: DEFAULT_MIN_CLUSTER,
            rng_seed: seed,
        }
    }

    #[test]
    fn affinity_examples() {
        assert_eq!(normal_affinity([0.0, 0.0, 1.0], [0.0, 0.0, 1.0]), 0.0);
        assert_eq!(normal_affinity([0.0, 0.0, 1.0], [0.0, 0.0, -1.0]), 0.0);
        assert_eq!(normal_affinity([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn flat_plane_is_one_cluster() {
        let cloud = fixtures::plane_grid(20, 20, 0.5);
        let graph = knn_graph(&cloud, 8).unwrap();
        let labels = grow(&cloud, &graph, &params(1.5, 0)).unwrap();
        assert_eq!(labels.k(), 1);
        assert_label_map(&labels, cloud.len());
    }

    #[test]
    fn parallel_planes_are_two_clusters() {
        let (cloud, truth) = fixtures::parallel_planes(15, 1.0, 10.0);
        let graph = knn_graph(&cloud, 8).unwrap();
        let labels = grow(&cloud, &graph, &params(3.0, 7)).unwrap();
        assert_eq!(labels.k(), 2);
        let purity = crate::eval::purity(&labels, &truth).unwrap();
        assert!(purity.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn missing_normals() {
        let cloud = fixtures::plane_grid(4, 4, 1.0).without_normals();
        let graph = knn_graph(&cloud, 3).unwrap();
        assert_eq!(grow(&cloud, &graph, &params(2.0, 0)), Err(Error::MissingNormals));
    }

    #[test]
    fn auto_threshold_on_unit_grid() {
        let cloud = fixtures::plane_grid(10, 10, 1.0);
        let graph = knn_graph(&cloud, 4).unwrap();
        let t = auto_thresholds(&graph);
        assert_eq!(t.d_max, 2.5);
        assert!((t.theta_max - 20f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn auto_threshold_lower_median() {
        // Two pairs at spacing 1 and two pairs at spacing 2, far apart:
        // first-neighbor distances {1,1,1,1,2,2,2,2}; lower middle is 1.
        let pts = alloc::vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [100.0, 0.0, 0.0],
            [101.0, 0.0, 0.0],
            [200.0, 0.0, 0.0],
            [202.0, 0.0, 0.0],
            [300.0, 0.0, 0.0],
            [302.0, 0.0, 0.0],
        ];
        let cloud = PointCloud::from_positions(pts).unwrap();
        let graph = knn_graph(&cloud, 1).unwrap();
        assert_eq!(auto_thresholds(&graph).d_max, 2.5);
    }

    #[test]
    fn explicit_override_wins() {
        let cloud = fixtures::plane_grid(10, 10, 1.0);
        let graph = knn_graph(&cloud, 4).unwrap();
        let settings = SrgSettings {
            d_max: Some(0.7),
            theta_max: Some(0.1),
            ..Default::default()
        };
        let p = settings.resolve(&graph).unwrap();
        assert_eq!(p.d_max, 0.7);
        assert_eq!(p.theta_max, 0.1);
        assert_eq!(p.target_k, DEFAULT_TARGET_K);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(params(0.0, 0).validate().is_err());
        let mut p = params(1.0, 0);
        p.theta_max = 2.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn merge_is_noop_at_target() {
        let (cloud, _) = fixtures::dihedral(600, 3);
        let graph = knn_graph(&cloud, 10).unwrap();
        let labels = LabelMap::from_labels((0..cloud.len()).map(|i| i % 3).collect());
        let merged = merge_to_target(&cloud, &labels, &graph, 3, 0).unwrap();
        assert_eq!(merged, labels);
    }

    #[test]
    fn forced_adjacency_merge() {
        // A 100-point plane, then 5 points next to it, then a far 100-point plane.
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push([i as f64, j as f64, 0.0]);
            }
        }
        for j in 0..5 {
            pts.push([10.0, j as f64 * 2.0, 0.0]);
        }
        for i in 0..10 {
            for j in 0..10 {
                pts.push([100.0 + i as f64, j as f64, 0.0]);
            }
        }
        let normals = vec![[0.0, 0.0, 1.0]; pts.len()];
        let cloud = PointCloud::new(pts, Some(normals), "forced").unwrap();
        let labels: Vec<usize> = (0..205)
            .map(|i| {
                if i < 100 {
                    0
                } else if i < 105 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let labels = LabelMap::from_labels(labels);
        let graph = knn_graph(&cloud, 4).unwrap();
        let merged = merge_to_target(&cloud, &labels, &graph, 2, 0).unwrap();
        assert_eq!(merged.k(), 2);
        assert!(merged.labels()[..105].iter().all(|&l| l == 0));
        assert!(merged.labels()[105..].iter().all(|&l| l == 1));
    }

    #[test]
    fn merge_without_adjacency_uses_centroids() {
        // Isolated clusters: the 2-point cluster is nearest to cluster 2.
        let pts = alloc::vec![
            [0.0, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [0.2, 0.0, 0.0],
            [10.0, 0.0, 0.0],
            [10.1, 0.0, 0.0],
            [12.0, 0.0, 0.0],
            [12.1, 0.0, 0.0],
            [12.2, 0.0, 0.0],
        ];
        let normals = vec![[0.0, 0.0, 1.0]; pts.len()];
        let cloud = PointCloud::new(pts, Some(normals), "").unwrap();
        let graph = knn_graph(&cloud, 1).unwrap();
        let labels = LabelMap::from_labels(alloc::vec![0, 0, 0, 1, 1, 2, 2, 2]);
        let merged = merge_to_target(&cloud, &labels, &graph, 2, 0).unwrap();
        assert_eq!(merged.labels(), &[0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn small_clusters_absorbed() {
        let (cloud, _) = fixtures::dihedral(400, 1);
        let graph = knn_graph(&cloud, 8).unwrap();
        let mut raw: Vec<usize> = (0..cloud.len()).map(|i| if i < 200 { 0 } else { 1 }).collect();
        raw[5] = 2;
        let merged = merge_to_target(&cloud, &LabelMap::from_labels(raw), &graph, 6, 10).unwrap();
        assert_eq!(merged.k(), 2);
    }
}
