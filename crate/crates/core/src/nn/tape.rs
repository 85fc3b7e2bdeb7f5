use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math::Fnv;
use crate::types::NeighborGraph;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    GatherNeighbors {
        x: Var,
        neighbors: Vec<usize>,
        k: usize,
    },
    EdgeFeatures {
        x: Var,
        neighbors: Vec<usize>,
        k: usize,
    },
    NeighborhoodMaxPool {
        x: Var,
        k: usize,
        /// Winning slot per `(point, channel)`.
        argmax: Vec<u32>,
    },
    NeighborMax {
        x: Var,
        /// Winning neighbor point per `(point, channel)`.
        source: Vec<u32>,
    },
    EdgeConv {
        x: Var,
        w: Var,
        b: Var,
        neighbors: Vec<usize>,
        k: usize,
        /// Winning neighbor slot per `(point, channel)`.
        argmax: Vec<u32>,
        /// Derivative of the activation at the pooled pre-activation.
        act_grad: Vec<f64>,
    },
    GlobalMaxPool {
        x: Var,
        /// Winning row per column.
        argmax: Vec<u32>,
    },
    Concat {
        parts: Vec<Var>,
    },
    Replicate {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
        /// Per-row loss weights.
        weights: Vec<f64>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
    CenterColumns {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records executed operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    track_branches: bool,
    branches: Fnv,
}

/// Gradients of a scalar with respect to every tracked tape value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn mismatch(msg: alloc::string::String) -> Error {
    Error::ShapeMismatch(msg)
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta),
    }
}

fn accumulate_slice(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta.to_vec()),
    }
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(mismatch(format!("{what} must be 2-D, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that fingerprints every branch decision (activation signs,
    /// pooling winners, graph structure). Two passes with equal
    /// [`Tape::branch_signature`] evaluate the same smooth piece of the
    /// function.
    pub fn with_branch_tracking() -> Self {
        Self {
            track_branches: true,
            ..Self::default()
        }
    }

    pub fn branch_signature(&self) -> u64 {
        self.branches.0
    }

    /// Folds externally made discrete choices (e.g. a recomputed graph) into
    /// the branch signature.
    pub fn note_branches<I: IntoIterator<Item = u64>>(&mut self, values: I) {
        if self.track_branches {
            for v in values {
                self.branches.write_u64(v);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `y = x·W (+ bias)` for `x: N×a`, `W: a×b`, `bias: b`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (n, a) = matrix_dims(self.value(x), "linear input")?;
        let (wa, b) = matrix_dims(self.value(w), "linear weight")?;
        if a != wa {
            return Err(mismatch(format!("linear: input width {a} vs weight rows {wa}")));
        }
        let mut out = vec![0.0; n * b];
        if let Some(bv) = bias {
            let bias_data = self.value(bv).data();
            if bias_data.len() != b {
                return Err(mismatch(format!(
                    "linear: bias length {} vs width {b}",
                    bias_data.len()
                )));
            }
            for row in out.chunks_exact_mut(b) {
                row.copy_from_slice(bias_data);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(
            n,
            a,
            b,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            beta,
        );
        let tracked = self.tracked(x) || self.tracked(w) || bias.is_some_and(|v| self.tracked(v));
        Ok(self.push(Tensor::new(&[n, b], out)?, Op::Linear { x, w, b: bias }, tracked))
    }

    /// Elementwise sum of equal-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Add { a, b }, tracked))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::Reshape { x }, tracked))
    }

    /// `y = x` for `x > 0`, else `slope·x`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let src = self.value(x);
        let data: Vec<f64> = src
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = src.shape().to_vec();
        if self.track_branches {
            let bits: Vec<u64> = src.data().iter().map(|&v| (v > 0.0) as u64).collect();
            self.note_branches(bits);
        }
        let tracked = self.tracked(x);
        let value = Tensor::new(&shape, data).expect("same shape");
        self.push(value, Op::LeakyRelu { x, slope }, tracked)
    }

    fn check_graph(&self, x: Var, graph: &NeighborGraph) -> Result<(usize, usize)> {
        let (n, c) = matrix_dims(self.value(x), "graph features")?;
        if graph.len() != n {
            return Err(mismatch(format!("graph has {} rows for {n} points", graph.len())));
        }
        Ok((n, c))
    }

    /// `N×c → N×k×c`: slot `(i, j)` holds the features of the `j`-th neighbor
    /// of point `i`.
    pub fn gather_neighbors(&mut self, x: Var, graph: &NeighborGraph) -> Result<Var> {
        let (n, c) = self.check_graph(x, graph)?;
        let k = graph.k();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * k * c);
        for &j in graph.neighbors_flat() {
            out.extend_from_slice(&src[j * c..(j + 1) * c]);
        }
        let tracked = self.tracked(x);
        let op = Op::GatherNeighbors {
            x,
            neighbors: graph.neighbors_flat().to_vec(),
            k,
        };
        Ok(self.push(Tensor::new(&[n, k, c], out)?, op, tracked))
    }

    /// `N×c → N×k×2c`: slot `(i, j)` holds `[x_i, x_i − x_j]`.
    pub fn edge_features(&mut self, x: Var, graph: &NeighborGraph) -> Result<Var> {
        let (n, c) = self.check_graph(x, graph)?;
        let k = graph.k();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * k * 2 * c);
        for i in 0..n {
            let xi = &src[i * c..(i + 1) * c];
            for &j in graph.row(i) {
                let xj = &src[j * c..(j + 1) * c];
                out.extend_from_slice(xi);
                out.extend(xi.iter().zip(xj).map(|(a, b)| a - b));
            }
        }
        let tracked = self.tracked(x);
        let op = Op::EdgeFeatures {
            x,
            neighbors: graph.neighbors_flat().to_vec(),
            k,
        };
        Ok(self.push(Tensor::new(&[n, k, 2 * c], out)?, op, tracked))
    }

    /// `N×k×c → N×c`, maximum over the neighbor slots (lowest slot on ties).
    pub fn neighborhood_max_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] == 0 {
            return Err(mismatch(format!("neighborhood pool expects N×k×c, got {shape:?}")));
        }
        let (n, k, c) = (shape[0], shape[1], shape[2]);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c];
        let mut argmax = vec![0u32; n * c];
        for i in 0..n {
            let base = i * k * c;
            out[i * c..(i + 1) * c].copy_from_slice(&src[base..base + c]);
            for slot in 1..k {
                let row = &src[base + slot * c..base + (slot + 1) * c];
                for ch in 0..c {
                    if row[ch] > out[i * c + ch] {
                        out[i * c + ch] = row[ch];
                        argmax[i * c + ch] = slot as u32;
                    }
                }
            }
        }
        self.note_branches(argmax.iter().map(|&a| a as u64));
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::new(&[n, c], out)?,
            Op::NeighborhoodMaxPool { x, k, argmax },
            tracked,
        ))
    }

    /// `N×c → N×c`, channelwise maximum over the graph neighbors of each
    /// point (lowest slot on ties). Equal to `gather_neighbors →
    /// neighborhood_max_pool` without the `N×k×c` intermediate.
    pub fn neighbor_max(&mut self, x: Var, graph: &NeighborGraph) -> Result<Var> {
        let (n, c) = self.check_graph(x, graph)?;
        if graph.k() == 0 {
            return Err(mismatch("neighbor max over an empty neighborhood".into()));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c];
        let mut source = vec![0u32; n * c];
        let mut slots = vec![0u32; n * c];
        for i in 0..n {
            let row = graph.row(i);
            let first = row[0];
            out[i * c..(i + 1) * c].copy_from_slice(&src[first * c..(first + 1) * c]);
            source[i * c..(i + 1) * c].iter_mut().for_each(|s| *s = first as u32);
            for (slot, &j) in row.iter().enumerate().skip(1) {
                let xj = &src[j * c..(j + 1) * c];
                for ch in 0..c {
                    if xj[ch] > out[i * c + ch] {
                        out[i * c + ch] = xj[ch];
                        source[i * c + ch] = j as u32;
                        slots[i * c + ch] = slot as u32;
                    }
                }
            }
        }
        self.note_branches(slots.iter().map(|&a| a as u64));
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(&[n, c], out)?, Op::NeighborMax { x, source }, tracked))
    }

    /// Fused edge convolution: `y_i = max_j σ(W·[x_i, x_i − x_j] + b)` with
    /// `σ` the leaky ReLU. Equal to `edge_features → linear → leaky_relu →
    /// neighborhood_max_pool` but never materializes the `N×k×2c` slots:
    /// the slot pre-activation is `x_i·(W_top + W_bot) − x_j·W_bot + b`, and
    /// `σ` is monotone so it commutes with the max.
    pub fn edge_conv(&mut self, x: Var, w: Var, b: Var, graph: &NeighborGraph, slope: f64) -> Result<Var> {
        let (n, c) = self.check_graph(x, graph)?;
        let (wr, o) = matrix_dims(self.value(w), "edge conv weight")?;
        if wr != 2 * c {
            return Err(mismatch(format!("edge conv: weight rows {wr} vs 2×{c}")));
        }
        if self.value(b).len() != o {
            return Err(mismatch(format!(
                "edge conv: bias length {} vs {o}",
                self.value(b).len()
            )));
        }
        let k = graph.k();
        let wd = self.value(w).data();
        let (w_top, w_bot) = wd.split_at(c * o);
        let w_sum: Vec<f64> = w_top.iter().zip(w_bot).map(|(a, b)| a + b).collect();
        let xd = self.value(x).data();
        let mut center = vec![0.0; n * o];
        let mut neighbor = vec![0.0; n * o];
        gemm(n, c, o, xd, false, &w_sum, false, &mut center, 0.0);
        gemm(n, c, o, xd, false, w_bot, false, &mut neighbor, 0.0);
        let bias = self.value(b).data();
        let mut out = vec![0.0; n * o];
        let mut argmax = vec![0u32; n * o];
        let mut act_grad = vec![0.0; n * o];
        for i in 0..n {
            let row = graph.row(i);
            let ci = &center[i * o..(i + 1) * o];
            for ch in 0..o {
                let mut best = ci[ch] - neighbor[row[0] * o + ch] + bias[ch];
                let mut best_slot = 0;
                for (slot, &j) in row.iter().enumerate().skip(1) {
                    let z = ci[ch] - neighbor[j * o + ch] + bias[ch];
                    if z > best {
                        best = z;
                        best_slot = slot;
                    }
                }
                let (y, g) = if best > 0.0 { (best, 1.0) } else { (slope * best, slope) };
                out[i * o + ch] = y;
                argmax[i * o + ch] = best_slot as u32;
                act_grad[i * o + ch] = g;
            }
        }
        if self.track_branches {
            let sig: Vec<u64> = argmax
                .iter()
                .zip(&act_grad)
                .map(|(&a, &g)| ((a as u64) << 1) | (g == 1.0) as u64)
                .collect();
            self.note_branches(sig);
        }
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        let op = Op::EdgeConv {
            x,
            w,
            b,
            neighbors: graph.neighbors_flat().to_vec(),
            k,
            argmax,
            act_grad,
        };
        Ok(self.push(Tensor::new(&[n, o], out)?, op, tracked))
    }

    /// `N×c → 1×c` columnwise maximum (lowest row on ties).
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c) = matrix_dims(self.value(x), "global pool input")?;
        if n == 0 {
            return Err(mismatch("global pool of zero rows".into()));
        }
        let src = self.value(x).data();
        let mut out = src[..c].to_vec();
        let mut argmax = vec![0u32; c];
        for i in 1..n {
            for ch in 0..c {
                if src[i * c + ch] > out[ch] {
                    out[ch] = src[i * c + ch];
                    argmax[ch] = i as u32;
                }
            }
        }
        self.note_branches(argmax.iter().map(|&a| a as u64));
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(&[1, c], out)?, Op::GlobalMaxPool { x, argmax }, tracked))
    }

    /// Channelwise concatenation of `N×c_i` tensors, in argument order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| mismatch("concat of zero tensors".into()))?;
        let (n, _) = matrix_dims(self.value(first), "concat input")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc) = matrix_dims(self.value(p), "concat input")?;
            if pn != n {
                return Err(mismatch(format!("concat: {pn} rows vs {n}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Tensor::new(&[n, total], out)?,
            Op::Concat { parts: parts.to_vec() },
            tracked,
        ))
    }

    /// `1×c → n×c`, every row a copy of the input.
    pub fn replicate_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, c) = matrix_dims(self.value(x), "replicate input")?;
        if r != 1 {
            return Err(mismatch(format!("replicate expects one row, got {r}")));
        }
        let row = self.value(x).data().to_vec();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(&row);
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(&[n, c], out)?, Op::Replicate { x }, tracked))
    }

    /// Mean over rows of `−log softmax(logits)[target]`, as a `1×1` tensor.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let n = targets.len().max(1);
        let weights = vec![1.0 / n as f64; targets.len()];
        self.weighted_softmax_cross_entropy(logits, targets, &weights)
    }

    /// `Σ_i w_i·(−log softmax(logits_i)[target_i])`, as a `1×1` tensor.
    pub fn weighted_softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (n, k) = matrix_dims(self.value(logits), "logits")?;
        for len in [targets.len(), weights.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::TargetOutOfRange { target: t, classes: k });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &src[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = libm::exp(v - max);
                sum += *p;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= sum;
            }
            loss += weights[i] * (libm::log(sum) - (row[targets[i]] - max));
        }
        let tracked = self.tracked(logits);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            weights: weights.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, tracked))
    }

    /// `Σ w·x` as a `1×1` tensor, for a fixed weight array.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(mismatch(format!(
                "weighted sum: {} weights for {} values",
                weights.len(),
                self.value(x).len()
            )));
        }
        let s = self.value(x).data().iter().zip(weights).map(|(a, b)| a * b).sum();
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            tracked,
        ))
    }

    /// Sum of all entries.
    pub fn sum(&mut self, x: Var) -> Var {
        let ones = vec![1.0; self.value(x).len()];
        self.weighted_sum(x, &ones).expect("matching length")
    }

    /// Subtracts from every column its mean over the rows.
    pub fn center_columns(&mut self, x: Var) -> Result<Var> {
        let (n, c) = matrix_dims(self.value(x), "center input")?;
        let src = self.value(x).data();
        let mut mean = vec![0.0; c];
        for row in src.chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut out = src.to_vec();
        for row in out.chunks_exact_mut(c) {
            row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        }
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(&[n, c], out)?, Op::CenterColumns { x }, tracked))
    }

    /// Reverse pass from a `1×1` value.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(mismatch(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, a) = (self.value(*x).rows(), self.value(*x).cols());
                let o = self.value(*w).cols();
                if self.tracked(*x) {
                    let mut dx = vec![0.0; n * a];
                    gemm(n, o, a, g, false, self.value(*w).data(), true, &mut dx, 0.0);
                    accumulate(&mut grads[x.0], dx);
                }
                if self.tracked(*w) {
                    let mut dw = vec![0.0; a * o];
                    gemm(a, n, o, self.value(*x).data(), true, g, false, &mut dw, 0.0);
                    accumulate(&mut grads[w.0], dw);
                }
                if let Some(b) = b.filter(|b| self.tracked(*b)) {
                    let mut db = vec![0.0; o];
                    for row in g.chunks_exact(o) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.tracked(*v) {
                        accumulate_slice(&mut grads[v.0], g);
                    }
                }
            }
            Op::Reshape { x } => accumulate_slice(&mut grads[x.0], g),
            Op::LeakyRelu { x, slope } => {
                let dx: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { slope * gv })
                    .collect();
                accumulate(&mut grads[x.0], dx);
            }
            Op::GatherNeighbors { x, neighbors, k } => {
                let c = self.value(*x).cols();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (slot, &j) in neighbors.iter().enumerate() {
                    let src = &g[slot * c..(slot + 1) * c];
                    dx[j * c..(j + 1) * c].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                }
                let _ = k;
                accumulate(&mut grads[x.0], dx);
            }
            Op::EdgeFeatures { x, neighbors, k } => {
                let c = self.value(*x).cols();
                let n = self.value(*x).rows();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    for slot in 0..*k {
                        let j = neighbors[i * k + slot];
                        let base = (i * k + slot) * 2 * c;
                        for ch in 0..c {
                            let center = g[base + ch];
                            let diff = g[base + c + ch];
                            dx[i * c + ch] += center + diff;
                            dx[j * c + ch] -= diff;
                        }
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::NeighborhoodMaxPool { x, k, argmax } => {
                let shape = self.value(*x).shape();
                let (n, c) = (shape[0], shape[2]);
                let mut dx = vec![0.0; n * k * c];
                for i in 0..n {
                    for ch in 0..c {
                        let slot = argmax[i * c + ch] as usize;
                        dx[(i * k + slot) * c + ch] += g[i * c + ch];
                    }
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::NeighborMax { x, source } => {
                let c = self.value(*x).cols();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (idx, (&j, &gv)) in source.iter().zip(g).enumerate() {
                    dx[j as usize * c + idx % c] += gv;
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::EdgeConv {
                x,
                w,
                b,
                neighbors,
                k,
                argmax,
                act_grad,
                ..
            } => {
                let (n, c) = (self.value(*x).rows(), self.value(*x).cols());
                let o = self.value(*w).cols();
                // Gradients of the per-point center and neighbor projections.
                let mut d_center = vec![0.0; n * o];
                let mut d_neighbor = vec![0.0; n * o];
                let mut db = vec![0.0; o];
                for i in 0..n {
                    for ch in 0..o {
                        let gz = g[i * o + ch] * act_grad[i * o + ch];
                        let j = neighbors[i * k + argmax[i * o + ch] as usize];
                        d_center[i * o + ch] += gz;
                        d_neighbor[j * o + ch] -= gz;
                        db[ch] += gz;
                    }
                }
                let xd = self.value(*x).data();
                if self.tracked(*x) {
                    let wd = self.value(*w).data();
                    let (w_top, w_bot) = wd.split_at(c * o);
                    let w_sum: Vec<f64> = w_top.iter().zip(w_bot).map(|(a, b)| a + b).collect();
                    let mut dx = vec![0.0; n * c];
                    gemm(n, o, c, &d_center, false, &w_sum, true, &mut dx, 0.0);
                    gemm(n, o, c, &d_neighbor, false, w_bot, true, &mut dx, 1.0);
                    accumulate(&mut grads[x.0], dx);
                }
                if self.tracked(*w) {
                    let mut dw = vec![0.0; 2 * c * o];
                    let (top, bot) = dw.split_at_mut(c * o);
                    gemm(c, n, o, xd, true, &d_center, false, top, 0.0);
                    let both: Vec<f64> = d_center.iter().zip(&d_neighbor).map(|(a, b)| a + b).collect();
                    gemm(c, n, o, xd, true, &both, false, bot, 0.0);
                    accumulate(&mut grads[w.0], dw);
                }
                if self.tracked(*b) {
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::GlobalMaxPool { x, argmax } => {
                let (n, c) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dx = vec![0.0; n * c];
                for ch in 0..c {
                    dx[argmax[ch] as usize * c + ch] += g[ch];
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::Concat { parts } => {
                let n = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.tracked(p) {
                        let mut dp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(&mut grads[p.0], dp);
                    }
                    offset += w;
                }
            }
            Op::Replicate { x } => {
                let c = self.value(*x).cols();
                let mut dx = vec![0.0; c];
                for row in g.chunks_exact(c) {
                    dx.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
                weights,
            } => {
                let k = self.value(*logits).cols();
                let mut dl = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    dl[i * k + t] -= 1.0;
                    let scale = g[0] * weights[i];
                    dl[i * k..(i + 1) * k].iter_mut().for_each(|v| *v *= scale);
                }
                accumulate(&mut grads[logits.0], dl);
            }
            Op::WeightedSum { x, weights } => {
                let dx: Vec<f64> = weights.iter().map(|w| w * g[0]).collect();
                accumulate(&mut grads[x.0], dx);
            }
            Op::CenterColumns { x } => {
                let (n, c) = (self.value(*x).rows(), self.value(*x).cols());
                let mut mean = vec![0.0; c];
                for row in g.chunks_exact(c) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut dx = g.to_vec();
                for row in dx.chunks_exact_mut(c) {
                    row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
                }
                accumulate(&mut grads[x.0], dx);
            }
        }
    }
}
