//! The segmentation network: a learned 3×3 input transform, three edge
//! convolutions over dynamically rebuilt KNN graphs, a covariance branch that
//! reduces the cloud to a global codeword, and a per-point head over the
//! codeword and the edge-convolution features.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamGroup, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};
use crate::normals::point_covariance;
use crate::spatial::{feature_knn_graph, knn_graph};
use crate::types::{NeighborGraph, PointCloud};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Neighbors per graph, input and feature space alike.
    pub k_graph: usize,
    pub edge_widths: Vec<usize>,
    /// Transformer widths: edge convolution, pointwise layer, hidden fc.
    pub transformer_widths: [usize; 3],
    /// The perceptron applied to `[xyz, covariance]`.
    pub cov_widths: Vec<usize>,
    /// Output widths of the neighborhood-max graph layers.
    pub graph_widths: Vec<usize>,
    /// Hidden widths of the perceptron before the global max; its last
    /// layer has `bottleneck_dim` outputs.
    pub post_widths: Vec<usize>,
    pub bottleneck_dim: usize,
    pub head_widths: Vec<usize>,
    pub out_labels: usize,
    /// Rebuild the graph in feature space before edge layers 2 and up.
    pub dynamic_recompute: bool,
    pub leaky_slope: f64,
    /// Subtract from every logit channel its mean over the cloud.
    pub center_logits: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k_graph: 20,
            edge_widths: vec![64, 64, 64],
            transformer_widths: [64, 128, 64],
            cov_widths: vec![64, 64, 64],
            graph_widths: vec![128, 256],
            post_widths: vec![256, 256],
            bottleneck_dim: 512,
            head_widths: vec![256, 128],
            out_labels: crate::srg::DEFAULT_TARGET_K,
            dynamic_recompute: true,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            center_logits: true,
        }
    }
}

impl ModelConfig {
    /// A narrow network for tests and gradient checks.
    pub fn tiny(out_labels: usize) -> Self {
        Self {
            k_graph: 6,
            edge_widths: vec![8, 8, 8],
            transformer_widths: [8, 8, 8],
            cov_widths: vec![8, 8, 8],
            graph_widths: vec![8, 8],
            post_widths: vec![8, 8],
            bottleneck_dim: 16,
            head_widths: vec![8, 8],
            out_labels,
            dynamic_recompute: true,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            center_logits: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self
            .edge_widths
            .iter()
            .chain(&self.transformer_widths)
            .chain(&self.cov_widths)
            .chain(&self.graph_widths)
            .chain(&self.post_widths)
            .chain(&self.head_widths);
        if widths.clone().any(|&w| w == 0) || self.bottleneck_dim == 0 || self.out_labels == 0 {
            return Err(Error::InvalidParam("layer widths must be >= 1".into()));
        }
        if self.edge_widths.is_empty() || self.cov_widths.is_empty() {
            return Err(Error::InvalidParam(
                "at least one edge and one covariance layer required".into(),
            ));
        }
        if self.k_graph == 0 {
            return Err(Error::InvalidParam("k_graph must be >= 1".into()));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidParam(format!(
                "leaky slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Width of the per-point head input.
    pub fn head_input_width(&self) -> usize {
        self.bottleneck_dim + self.edge_widths.iter().sum::<usize>()
    }

    /// `(name, shape)` of every parameter in creation order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut dense = |name: String, a: usize, b: usize, bias: bool| {
            out.push((format!("{name}.w"), vec![a, b]));
            if bias {
                out.push((format!("{name}.b"), vec![b]));
            }
        };
        let [te, tp, tf] = self.transformer_widths;
        dense("tnet.edge".into(), 12, te, true);
        dense("tnet.point".into(), te, tp, true);
        dense("tnet.fc".into(), tp, tf, true);
        dense("tnet.out".into(), tf, 9, true);
        let mut c = 6;
        for (l, &w) in self.edge_widths.iter().enumerate() {
            dense(format!("edge{l}"), 2 * c, w, true);
            c = w;
        }
        let mut c = 12;
        for (l, &w) in self.cov_widths.iter().enumerate() {
            dense(format!("cov.mlp{l}"), c, w, true);
            c = w;
        }
        for (l, &w) in self.graph_widths.iter().enumerate() {
            dense(format!("cov.graph{l}"), c, w, false);
            c = w;
        }
        for (l, &w) in self
            .post_widths
            .iter()
            .chain(core::iter::once(&self.bottleneck_dim))
            .enumerate()
        {
            dense(format!("cov.post{l}"), c, w, true);
            c = w;
        }
        let mut c = self.head_input_width();
        for (l, &w) in self.head_widths.iter().enumerate() {
            dense(format!("head.fc{l}"), c, w, true);
            c = w;
        }
        dense("head.out".into(), c, self.out_labels, true);
        out
    }
}

/// Network parameters bound to their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SrgNet {
    pub config: ModelConfig,
    pub params: ParamGroup,
}

impl SrgNet {
    /// Uniform He initialization for leaky units, zero biases, and a zero
    /// transformer output layer so the initial transform is the identity.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope = config.leaky_slope;
        let mut params = ParamGroup::new();
        for (name, shape) in config.param_shapes() {
            let len: usize = shape.iter().product();
            let data = if name.ends_with(".b") || name.starts_with("tnet.out") {
                vec![0.0; len]
            } else {
                let fan_in = shape[0] as f64;
                let bound = libm::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
                (0..len).map(|_| rng.random_range(-bound..bound)).collect()
            };
            params.insert(&name, Tensor::new(&shape, data)?)?;
        }
        Ok(Self { config, params })
    }

    /// Rebinds loaded parameters, checking names and shapes against the
    /// configuration.
    pub fn from_parts(config: ModelConfig, params: ParamGroup) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (name, shape)) in expected.iter().enumerate() {
            if params.name(i) != name || params.value(i).shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {i}: expected {name} {shape:?}, found {} {:?}",
                    params.name(i),
                    params.value(i).shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    /// Forward pass on a fresh tape.
    pub fn forward(&self, input: &ModelInput) -> Result<(Tape, Vec<Var>, ForwardOutput)> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let out = forward(&mut tape, &self.params, &vars, input, &self.config)?;
        Ok((tape, vars, out))
    }

    /// Rowwise argmax of the logits (ties to the lowest label).
    pub fn predict(&self, input: &ModelInput) -> Result<Vec<usize>> {
        let (tape, _, out) = self.forward(input)?;
        Ok(tape.value(out.logits).argmax_rows())
    }
}

/// Per-cloud constants consumed by the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub positions: Tensor,
    pub normals: Tensor,
    /// KNN graph over the input positions.
    pub graph: NeighborGraph,
    /// Neighborhood covariance of every point, flattened row-major.
    pub covariance: Tensor,
}

impl ModelInput {
    pub fn new(cloud: &PointCloud, k_graph: usize) -> Result<Self> {
        let normals = cloud.require_normals()?;
        let graph = knn_graph(cloud, k_graph)?;
        Self::with_graph(cloud.positions(), normals, graph)
    }

    pub fn with_graph(positions: &[crate::Point3], normals: &[crate::Point3], graph: NeighborGraph) -> Result<Self> {
        let n = positions.len();
        if normals.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: normals.len(),
            });
        }
        if graph.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: graph.len(),
            });
        }
        let mut cov = Vec::with_capacity(n * 9);
        for i in 0..n {
            cov.extend_from_slice(&point_covariance(positions, &graph, i).to_array9());
        }
        Ok(Self {
            positions: Tensor::new(&[n, 3], positions.iter().flatten().copied().collect())?,
            normals: Tensor::new(&[n, 3], normals.iter().flatten().copied().collect())?,
            graph,
            covariance: Tensor::new(&[n, 9], cov)?,
        })
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `N×K` raw scores.
    pub logits: Var,
    /// `1×bottleneck_dim` global codeword.
    pub bottleneck: Var,
    /// Per-point edge-convolution outputs, layer order.
    pub edge_outputs: Vec<Var>,
    pub transform: [[f64; 3]; 3],
    /// Frobenius norm of every stage output, in execution order.
    pub layer_norms: Vec<(String, f64)>,
}

struct Binder<'a> {
    params: &'a ParamGroup,
    vars: &'a [Var],
}

impl Binder<'_> {
    fn var(&self, name: &str) -> Result<Var> {
        self.params
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {name}")))
    }

    fn dense(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let w = self.var(&format!("{name}.w"))?;
        let b = self.var(&format!("{name}.b"))?;
        tape.linear(x, w, Some(b))
    }
}

/// One edge convolution: shared linear map over `[x_i, x_i − x_j]` slots,
/// leaky ReLU, then the neighborhood max.
pub fn edge_conv_layer(tape: &mut Tape, x: Var, w: Var, b: Var, graph: &NeighborGraph, slope: f64) -> Result<Var> {
    tape.edge_conv(x, w, b, graph, slope)
}

/// Neighborhood max, activation, feature map `k`, activation.
pub fn graph_layer(tape: &mut Tape, x: Var, k: Var, graph: &NeighborGraph, slope: f64) -> Result<Var> {
    let pooled = tape.neighbor_max(x, graph)?;
    let pooled = tape.leaky_relu(pooled, slope);
    let mapped = tape.linear(pooled, k, None)?;
    Ok(tape.leaky_relu(mapped, slope))
}

/// Predicts the 3×3 transform and applies it to positions and normals.
/// Returns `(T, positions·T, normals·T)`.
pub fn spatial_transform(
    tape: &mut Tape,
    params: &ParamGroup,
    vars: &[Var],
    input: &ModelInput,
    config: &ModelConfig,
) -> Result<(Var, Var, Var)> {
    let bind = Binder { params, vars };
    let slope = config.leaky_slope;
    let pos = tape.constant(input.positions.clone());
    let nrm = tape.constant(input.normals.clone());
    let x = tape.concat_channels(&[pos, nrm])?;
    let h = edge_conv_layer(
        tape,
        x,
        bind.var("tnet.edge.w")?,
        bind.var("tnet.edge.b")?,
        &input.graph,
        slope,
    )?;
    let h = bind.dense(tape, h, "tnet.point")?;
    let h = tape.leaky_relu(h, slope);
    let g = tape.global_max_pool(h)?;
    let g = bind.dense(tape, g, "tnet.fc")?;
    let g = tape.leaky_relu(g, slope);
    let delta = bind.dense(tape, g, "tnet.out")?;
    let delta = tape.reshape(delta, &[3, 3])?;
    let eye = tape.constant(Tensor::identity(3));
    let t = tape.add(eye, delta)?;
    let pos_t = tape.linear(pos, t, None)?;
    let nrm_t = tape.linear(nrm, t, None)?;
    Ok((t, pos_t, nrm_t))
}

/// `[xyz, covariance]` → perceptron → graph layers → perceptron → global max.
pub fn covariance_branch(
    tape: &mut Tape,
    params: &ParamGroup,
    vars: &[Var],
    input: &ModelInput,
    positions: Var,
    config: &ModelConfig,
    norms: &mut Vec<(String, f64)>,
) -> Result<Var> {
    let bind = Binder { params, vars };
    let slope = config.leaky_slope;
    let cov = tape.constant(input.covariance.clone());
    let mut h = tape.concat_channels(&[positions, cov])?;
    for l in 0..config.cov_widths.len() {
        let z = bind.dense(tape, h, &format!("cov.mlp{l}"))?;
        h = tape.leaky_relu(z, slope);
        norms.push((format!("cov.mlp{l}"), tape.value(h).frobenius_norm()));
    }
    for l in 0..config.graph_widths.len() {
        let k = bind.var(&format!("cov.graph{l}.w"))?;
        h = graph_layer(tape, h, k, &input.graph, slope)?;
        norms.push((format!("cov.graph{l}"), tape.value(h).frobenius_norm()));
    }
    for l in 0..=config.post_widths.len() {
        let z = bind.dense(tape, h, &format!("cov.post{l}"))?;
        h = tape.leaky_relu(z, slope);
        norms.push((format!("cov.post{l}"), tape.value(h).frobenius_norm()));
    }
    let b = tape.global_max_pool(h)?;
    norms.push(("bottleneck".into(), tape.value(b).frobenius_norm()));
    Ok(b)
}

/// Replicates the codeword per point, appends the per-point features and
/// maps every row to `K` logits.
pub fn segment_head(
    tape: &mut Tape,
    params: &ParamGroup,
    vars: &[Var],
    bottleneck: Var,
    point_features: &[Var],
    config: &ModelConfig,
) -> Result<Var> {
    let bind = Binder { params, vars };
    let n = point_features
        .first()
        .map(|&v| tape.value(v).rows())
        .ok_or_else(|| Error::ShapeMismatch("head needs per-point features".into()))?;
    let replicated = tape.replicate_rows(bottleneck, n)?;
    let mut parts = vec![replicated];
    parts.extend_from_slice(point_features);
    let mut h = tape.concat_channels(&parts)?;
    for l in 0..config.head_widths.len() {
        let z = bind.dense(tape, h, &format!("head.fc{l}"))?;
        h = tape.leaky_relu(z, config.leaky_slope);
    }
    bind.dense(tape, h, "head.out")
}

fn graph_fingerprint(graph: &NeighborGraph) -> impl Iterator<Item = u64> + '_ {
    graph.neighbors_flat().iter().map(|&j| j as u64)
}

/// Full network on one cloud.
pub fn forward(
    tape: &mut Tape,
    params: &ParamGroup,
    vars: &[Var],
    input: &ModelInput,
    config: &ModelConfig,
) -> Result<ForwardOutput> {
    let bind = Binder { params, vars };
    let slope = config.leaky_slope;
    let mut norms = Vec::new();
    let (t, pos_t, nrm_t) = spatial_transform(tape, params, vars, input, config)?;
    let tv = tape.value(t).data();
    let transform = [[tv[0], tv[1], tv[2]], [tv[3], tv[4], tv[5]], [tv[6], tv[7], tv[8]]];

    let mut x = tape.concat_channels(&[pos_t, nrm_t])?;
    let mut edge_outputs = Vec::with_capacity(config.edge_widths.len());
    let mut dynamic: Option<NeighborGraph> = None;
    for l in 0..config.edge_widths.len() {
        if l > 0 && config.dynamic_recompute {
            let value = tape.value(x);
            let g = feature_knn_graph(value.data(), value.rows(), value.cols(), input.graph.k())?;
            tape.note_branches(graph_fingerprint(&g));
            dynamic = Some(g);
        }
        let graph = dynamic.as_ref().unwrap_or(&input.graph);
        x = edge_conv_layer(
            tape,
            x,
            bind.var(&format!("edge{l}.w"))?,
            bind.var(&format!("edge{l}.b"))?,
            graph,
            slope,
        )?;
        norms.push((format!("edge{l}"), tape.value(x).frobenius_norm()));
        edge_outputs.push(x);
    }

    let bottleneck = covariance_branch(tape, params, vars, input, pos_t, config, &mut norms)?;
    let mut logits = segment_head(tape, params, vars, bottleneck, &edge_outputs, config)?;
    if config.center_logits {
        logits = tape.center_columns(logits)?;
    }
    norms.push(("logits".into(), tape.value(logits).frobenius_norm()));
    Ok(ForwardOutput {
        logits,
        bottleneck,
        edge_outputs,
        transform,
        layer_norms: norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn shapes_and_identity_transform() {
        let (cloud, _) = fixtures::three_part_figure(64, 0);
        let cfg = ModelConfig::tiny(4);
        let net = SrgNet::init(cfg.clone(), 1).unwrap();
        let input = ModelInput::new(&cloud, cfg.k_graph).unwrap();
        let (tape, _, out) = net.forward(&input).unwrap();
        assert_eq!(tape.value(out.logits).shape(), &[64, 4]);
        assert_eq!(tape.value(out.bottleneck).shape(), &[1, 16]);
        assert_eq!(out.transform, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(tape.value(out.logits).is_finite());
    }

    #[test]
    fn default_shapes() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.head_input_width(), 704);
        let shapes = cfg.param_shapes();
        let get = |n: &str| shapes.iter().find(|(name, _)| name == n).unwrap().1.clone();
        assert_eq!(get("cov.mlp0.w"), vec![12, 64]);
        assert_eq!(get("cov.graph1.w"), vec![128, 256]);
        assert_eq!(get("cov.post2.w"), vec![256, 512]);
        assert_eq!(get("head.fc0.w"), vec![704, 256]);
        assert_eq!(get("head.out.w"), vec![128, 6]);
        assert_eq!(get("edge0.w"), vec![12, 64]);
    }

    #[test]
    fn from_parts_rejects_wrong_shapes() {
        let net = SrgNet::init(ModelConfig::tiny(3), 0).unwrap();
        assert!(SrgNet::from_parts(ModelConfig::tiny(3), net.params.clone()).is_ok());
        assert!(SrgNet::from_parts(ModelConfig::tiny(4), net.params).is_err());
    }
}
