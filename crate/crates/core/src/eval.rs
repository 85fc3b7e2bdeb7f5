//! Scoring unsupervised labelings against ground truth.
//!
//! Predicted label ids are arbitrary, so predicted parts are first matched to
//! ground-truth parts by a maximum-intersection assignment.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::LabelMap;

/// `P × G` co-occurrence counts between predicted and ground-truth labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub predicted: usize,
    pub truth: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn get(&self, p: usize, g: usize) -> usize {
        self.counts[p * self.truth + g]
    }

    pub fn row(&self, p: usize) -> &[usize] {
        &self.counts[p * self.truth..(p + 1) * self.truth]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, p: usize) -> usize {
        self.row(p).iter().sum()
    }

    pub fn col_sum(&self, g: usize) -> usize {
        (0..self.predicted).map(|p| self.get(p, g)).sum()
    }
}

fn check_lengths(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    Ok(())
}

pub fn confusion(pred: &LabelMap, gt: &LabelMap) -> Result<ConfusionMatrix> {
    check_lengths(pred, gt)?;
    let (p, g) = (pred.k(), gt.k());
    let mut counts = vec![0usize; p * g];
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        counts[a * g + b] += 1;
    }
    Ok(ConfusionMatrix {
        predicted: p,
        truth: g,
        counts,
    })
}

/// Square min-cost assignment by shortest augmenting paths with potentials.
/// Returns `col_of_row` and the optimal total.
fn min_cost_square(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    let total = (0..n).map(|r| cost[r * n + col_of_row[r]]).sum();
    (col_of_row, total)
}

/// An optimal assignment between rows and columns of a cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `(row, column)` pairs, ascending by row; `min(P, G)` of them.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Above this padded size the tie-breaking pass (`O(n⁵)`) is skipped and the
/// first optimum found is returned; it is still deterministic.
pub const LEXICOGRAPHIC_LIMIT: usize = 24;

/// Minimum-cost injective assignment for a `rows × cols` cost matrix.
///
/// Rectangular inputs are padded with zero-cost dummies. Among optimal
/// assignments the lexicographically smallest (by column of row 0, then row
/// 1, ...) over the padded square problem is returned.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Result<Assignment> {
    if cost.len() != rows * cols {
        return Err(Error::ShapeMismatch(alloc::format!(
            "cost matrix of length {} is not {rows}×{cols}",
            cost.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParam("cost matrix has non-finite entries".into()));
    }
    let n = rows.max(cols);
    let mut square = vec![0.0; n * n];
    for r in 0..rows {
        square[r * n..r * n + cols].copy_from_slice(&cost[r * cols..(r + 1) * cols]);
    }
    let (direct, optimum) = min_cost_square(&square, n);
    if n > LEXICOGRAPHIC_LIMIT {
        let pairs: Vec<(usize, usize)> = (0..rows)
            .filter(|&r| direct[r] < cols)
            .map(|r| (r, direct[r]))
            .collect();
        let total = pairs.iter().map(|&(r, c)| cost[r * cols + c]).sum();
        return Ok(Assignment { pairs, total });
    }
    let scale = square.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-12 * scale * n.max(1) as f64;

    // Fix rows one at a time to the smallest column that keeps the rest optimal.
    let mut free_rows: Vec<usize> = (0..n).collect();
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut fixed_cost = 0.0;
    let mut col_of_row = vec![0usize; n];
    for r in 0..n {
        free_rows.retain(|&x| x != r);
        let mut chosen = None;
        for (ci, &c) in free_cols.iter().enumerate() {
            let mut rest_cols = free_cols.clone();
            rest_cols.remove(ci);
            let m = free_rows.len();
            let mut sub = vec![0.0; m * m];
            for (a, &rr) in free_rows.iter().enumerate() {
                for (b, &cc) in rest_cols.iter().enumerate() {
                    sub[a * m + b] = square[rr * n + cc];
                }
            }
            let (_, rest) = min_cost_square(&sub, m);
            if fixed_cost + square[r * n + c] + rest <= optimum + tol {
                chosen = Some(ci);
                break;
            }
        }
        let ci = chosen.expect("some column keeps the assignment optimal");
        let c = free_cols.remove(ci);
        fixed_cost += square[r * n + c];
        col_of_row[r] = c;
    }
    let pairs: Vec<(usize, usize)> = (0..rows)
        .filter(|&r| col_of_row[r] < cols)
        .map(|r| (r, col_of_row[r]))
        .collect();
    let total = pairs.iter().map(|&(r, c)| cost[r * cols + c]).sum();
    Ok(Assignment { pairs, total })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    pub miou: f64,
    /// IoU per ground-truth part; 0 for unmatched parts.
    pub per_part: Vec<f64>,
    /// `(predicted, ground truth)` pairs.
    pub matching: Vec<(usize, usize)>,
}

/// Mean IoU over ground-truth parts after maximum-intersection matching,
/// ties between matchings going to the larger total IoU.
pub fn miou(pred: &LabelMap, gt: &LabelMap) -> Result<MiouReport> {
    let cm = confusion(pred, gt)?;
    let (p, g) = (cm.predicted, cm.truth);
    // Intersections are integers and the IoU term sums to less than 1, so it
    // only decides between matchings of equal total intersection. That keeps
    // the score independent of how the predicted labels are numbered.
    let w = 1.0 / (p.min(g) + 1) as f64;
    let cost: Vec<f64> = (0..p * g)
        .map(|i| {
            let (a, b) = (i / g, i % g);
            let inter = cm.counts[i];
            let union = cm.row_sum(a) + cm.col_sum(b) - inter;
            let iou = if union > 0 { inter as f64 / union as f64 } else { 0.0 };
            -(inter as f64) - w * iou
        })
        .collect();
    let assignment = hungarian(&cost, p, g)?;
    let mut per_part = vec![0.0; g];
    for &(a, b) in &assignment.pairs {
        let inter = cm.get(a, b);
        let union = cm.row_sum(a) + cm.col_sum(b) - inter;
        if union > 0 {
            per_part[b] = inter as f64 / union as f64;
        }
    }
    let miou = if g == 0 {
        0.0
    } else {
        per_part.iter().sum::<f64>() / g as f64
    };
    Ok(MiouReport {
        miou,
        per_part,
        matching: assignment.pairs,
    })
}

/// Fraction of each predicted cluster's points that belong to its dominant
/// ground-truth part. Empty slots report 1.
pub fn purity(pred: &LabelMap, gt: &LabelMap) -> Result<Vec<f64>> {
    let cm = confusion(pred, gt)?;
    Ok((0..cm.predicted)
        .map(|p| {
            let total = cm.row_sum(p);
            if total == 0 {
                1.0
            } else {
                *cm.row(p).iter().max().unwrap() as f64 / total as f64
            }
        })
        .collect())
}

/// Fraction of points whose matched predicted label equals the truth.
pub fn matched_accuracy(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    let report = miou(pred, gt)?;
    let cm = confusion(pred, gt)?;
    let hits: usize = report.matching.iter().map(|&(a, b)| cm.get(a, b)).sum();
    Ok(hits as f64 / pred.len().max(1) as f64)
}
