//! Exact k-nearest-neighbor search and KNN graph construction.
//!
//! Every query orders candidates by `(squared distance, index)`, so distance
//! ties always resolve to the lower index. The kd-tree and the brute-force
//! scan share the same distance arithmetic and therefore agree bit for bit.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::dist2;
use crate::types::{NeighborGraph, Point3, PointCloud};

pub const DEFAULT_BUCKET_SIZE: usize = 16;

/// A neighbor returned by a query: point index and Euclidean distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced kd-tree over a borrowed point set.
#[derive(Clone, Debug)]
pub struct KdTree<'a> {
    points: &'a [Point3],
    indices: Vec<usize>,
    nodes: Vec<Node>,
    bucket_size: usize,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Point3]) -> Result<Self> {
        Self::with_bucket_size(points, DEFAULT_BUCKET_SIZE)
    }

    /// Splits on the axis of largest spread at the median, ordering equal
    /// coordinates by point index.
    pub fn with_bucket_size(points: &'a [Point3], bucket_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if bucket_size == 0 {
            return Err(Error::InvalidParam("bucket size must be at least 1".into()));
        }
        let mut tree = KdTree {
            points,
            indices: (0..points.len()).collect(),
            nodes: Vec::new(),
            bucket_size,
        };
        tree.build_node(0, points.len());
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= self.bucket_size {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let points = self.points;
        let slice = &mut self.indices[start..end];
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = points[slice[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.indices[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let mut best = 0;
        for a in 1..3 {
            if hi[a] - lo[a] > hi[best] - lo[best] {
                best = a;
            }
        }
        best
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index ranges of the leaves, in tree order.
    pub fn leaves(&self) -> Vec<&[usize]> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { start, end } => Some(&self.indices[start..end]),
                Node::Split { .. } => None,
            })
            .collect()
    }

    /// The `k` nearest stored points to `query`, self included.
    pub fn knn(&self, query: Point3, k: usize) -> Result<Vec<Neighbor>> {
        check_k(k, self.points.len())?;
        let mut best = Candidates::new(k);
        self.search(0, query, &mut best);
        Ok(best.finish())
    }

    fn search(&self, node: usize, query: Point3, best: &mut Candidates) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.indices[start..end] {
                    best.offer(dist2(query, self.points[i]), i);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, best);
                // `<=` keeps equal-distance candidates with lower indices reachable.
                if diff * diff <= best.bound() {
                    self.search(far, query, best);
                }
            }
        }
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        Err(Error::KTooLarge { k, n })
    } else {
        Ok(())
    }
}

/// Bounded candidate list sorted by `(d², index)`.
struct Candidates {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Candidates {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    fn offer(&mut self, d2: f64, index: usize) {
        if self.items.len() == self.k {
            let (wd, wi) = self.items[self.k - 1];
            if d2 > wd || (d2 == wd && index > wi) {
                return;
            }
        }
        let pos = self.items.partition_point(|&(d, i)| d < d2 || (d == d2 && i < index));
        self.items.insert(pos, (d2, index));
        self.items.truncate(self.k);
    }

    fn finish(self) -> Vec<Neighbor> {
        self.items
            .into_iter()
            .map(|(d2, index)| Neighbor {
                index,
                distance: libm::sqrt(d2),
            })
            .collect()
    }
}

/// Full scan with the same ordering rule as [`KdTree::knn`]; the test oracle.
pub fn knn_bruteforce(points: &[Point3], query: Point3, k: usize) -> Result<Vec<Neighbor>> {
    check_k(k, points.len())?;
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist2(query, *p), i)).collect();
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(all
        .into_iter()
        .take(k)
        .map(|(d2, index)| Neighbor {
            index,
            distance: libm::sqrt(d2),
        })
        .collect())
}

/// KNN graph of a cloud: row `i` holds the `k` nearest other points.
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<NeighborGraph> {
    knn_graph_points(cloud.positions(), k)
}

pub fn knn_graph_points(points: &[Point3], k: usize) -> Result<NeighborGraph> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if k == 0 || k + 1 > n {
        return Err(Error::KTooLarge { k, n });
    }
    let tree = KdTree::build(points)?;
    let mut neighbors = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for (i, p) in points.iter().enumerate() {
        let found = tree.knn(*p, k + 1)?;
        for nb in found.into_iter().filter(|nb| nb.index != i).take(k) {
            neighbors.push(nb.index);
            distances.push(nb.distance);
        }
    }
    Ok(NeighborGraph::from_raw(k, neighbors, distances))
}

/// Exact KNN graph over rows of a dense `n×dim` feature matrix, self
/// excluded, ties toward the lower index. Squared distances are expanded as
/// `‖a‖² + ‖b‖² − 2a·b` so the cross terms come from one matrix product.
pub fn feature_knn_graph(features: &[f64], n: usize, dim: usize, k: usize) -> Result<NeighborGraph> {
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if features.len() != n * dim {
        return Err(Error::ShapeMismatch(alloc::format!(
            "feature matrix of length {} is not {n}×{dim}",
            features.len()
        )));
    }
    if k == 0 || k + 1 > n {
        return Err(Error::KTooLarge { k, n });
    }
    let sq: Vec<f64> = features
        .chunks_exact(dim)
        .map(|row| row.iter().map(|v| v * v).sum())
        .collect();
    let mut gram = alloc::vec![0.0; n * n];
    crate::nn::gemm(n, dim, n, features, false, features, true, &mut gram, 0.0);
    let mut neighbors = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    // Sorted running best list; since `j` ascends, a later candidate only
    // displaces an entry when strictly closer, which keeps the index tie rule.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..n {
        best.clear();
        let g = &gram[i * n..(i + 1) * n];
        for j in (0..n).filter(|&j| j != i) {
            let d2 = (sq[i] + sq[j] - 2.0 * g[j]).max(0.0);
            if best.len() == k && d2 >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(d, _)| d <= d2);
            best.insert(pos, (d2, j));
            best.truncate(k);
        }
        for &(d2, j) in best.iter() {
            neighbors.push(j);
            distances.push(libm::sqrt(d2));
        }
    }
    Ok(NeighborGraph::from_raw(k, neighbors, distances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
    }

    #[test]
    fn single_point_tree_is_one_leaf() {
        let pts = vec![[1.0, 2.0, 3.0]];
        let tree = KdTree::build(&pts).unwrap();
        assert_eq!(tree.leaves(), vec![&[0usize][..]]);
    }

    #[test]
    fn seventeen_points_split_once() {
        let pts = random_points(17, 1);
        let tree = KdTree::build(&pts).unwrap();
        let leaves = tree.leaves();
        assert_eq!(leaves.len(), 2);
        let mut all: Vec<usize> = leaves.concat();
        all.sort_unstable();
        assert_eq!(all, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn self_query_returns_self() {
        let pts = random_points(200, 2);
        let tree = KdTree::build(&pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let nb = tree.knn(*p, 1).unwrap();
            assert_eq!(nb[0].index, i);
            assert_eq!(nb[0].distance, 0.0);
        }
    }

    #[test]
    fn small_line_queries() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let tree = KdTree::build(&pts).unwrap();
        let nb = tree.knn([0.9, 0.0, 0.0], 1).unwrap();
        assert_eq!(nb[0].index, 1);
        assert!((nb[0].distance - 0.1).abs() < 1e-12);
        let idx: Vec<usize> = tree.knn([0.9, 0.0, 0.0], 3).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![1, 0, 2]);
        assert_eq!(
            knn_bruteforce(&pts, [0.9, 0.0, 0.0], 3).unwrap(),
            tree.knn([0.9, 0.0, 0.0], 3).unwrap()
        );
    }

    #[test]
    fn k_too_large() {
        let pts = random_points(5, 3);
        let tree = KdTree::build(&pts).unwrap();
        assert_eq!(tree.knn([0.0; 3], 6), Err(Error::KTooLarge { k: 6, n: 5 }));
        assert!(knn_bruteforce(&pts, [0.0; 3], 6).is_err());
        let cloud = PointCloud::from_positions(pts).unwrap();
        assert!(knn_graph(&cloud, 5).is_err());
    }

    #[test]
    fn empty_build_fails() {
        assert_eq!(KdTree::build(&[]).err(), Some(Error::EmptyCloud));
    }

    #[test]
    fn ties_resolve_to_lower_index() {
        // Query equidistant from every point.
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];
        let tree = KdTree::with_bucket_size(&pts, 1).unwrap();
        let idx: Vec<usize> = tree.knn([0.0; 3], 4).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn collinear_graph() {
        let cloud = PointCloud::from_positions(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let g = knn_graph(&cloud, 1).unwrap();
        assert_eq!(g.neighbors_flat(), &[1, 0, 1]);
    }

    #[test]
    fn triangle_graph_uses_index_ties() {
        let h = libm::sqrt(3.0) / 2.0;
        let cloud = PointCloud::from_positions(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]]).unwrap();
        let g = knn_graph(&cloud, 2).unwrap();
        for i in 0..3 {
            let mut others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            others.sort_unstable();
            let mut row = g.row(i).to_vec();
            row.sort_unstable();
            assert_eq!(row, others);
        }
    }

    #[test]
    fn graph_rows_match_bruteforce() {
        let pts = random_points(500, 4);
        let cloud = PointCloud::from_positions(pts.clone()).unwrap();
        let g = knn_graph(&cloud, 20).unwrap();
        for i in 0..pts.len() {
            let expect: Vec<usize> = knn_bruteforce(&pts, pts[i], 21)
                .unwrap()
                .into_iter()
                .filter(|n| n.index != i)
                .take(20)
                .map(|n| n.index)
                .collect();
            assert_eq!(g.row(i), &expect[..]);
            assert!(g.distances_row(i).windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn feature_graph_matches_direct_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, dim, k) = (60, 7, 5);
        let feats: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
        let g = feature_knn_graph(&feats, n, dim, k).unwrap();
        for i in 0..n {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..dim)
                        .map(|c| (feats[i * dim + c] - feats[j * dim + c]).powi(2))
                        .sum();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = all.iter().take(k).map(|x| x.1).collect();
            assert_eq!(g.row(i), &expect[..]);
        }
    }
}
