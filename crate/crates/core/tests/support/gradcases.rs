//! Gradient-check cases shared by the autodiff tests and the acceptance
//! run. Each case reduces its op output to a scalar with fixed random
//! weights.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srgnet_core::model::{ModelConfig, ModelInput, SrgNet};
use srgnet_core::nn::{gradient_check, GradCheckOptions, GradCheckReport, ParamGroup, Tape, Tensor, Var};
use srgnet_core::spatial::knn_graph_points;
use srgnet_core::{fixtures, NeighborGraph, Point3, Result};

pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;
pub const SLOPE: f64 = 0.2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn group(seed: u64, shapes: &[(&str, &[usize])]) -> ParamGroup {
    let mut r = rng(seed);
    let mut g = ParamGroup::new();
    for (name, shape) in shapes {
        g.insert(name, random_tensor(&mut r, shape)).unwrap();
    }
    g
}

fn weights(seed: u64, len: usize) -> Vec<f64> {
    let mut r = rng(seed ^ 0x5eed);
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn points(n: usize, seed: u64) -> Vec<Point3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            [
                fixtures::gaussian(&mut r),
                fixtures::gaussian(&mut r),
                fixtures::gaussian(&mut r),
            ]
        })
        .collect()
}

pub fn graph(n: usize, k: usize, seed: u64) -> NeighborGraph {
    knn_graph_points(&points(n, seed), k).unwrap()
}

pub fn scalarize(tape: &mut Tape, y: Var) -> Result<Var> {
    let len = tape.value(y).len();
    tape.weighted_sum(y, &weights(len as u64, len))
}

fn check<F>(params: &ParamGroup, f: F) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradient_check(params, f, &GradCheckOptions::default()).unwrap()
}

/// One report per primitive, named after the op.
pub fn primitive_reports() -> Vec<(&'static str, GradCheckReport)> {
    let mut out = Vec::new();

    let p = group(1, &[("x", &[5, 4]), ("w", &[4, 3]), ("b", &[3])]);
    out.push((
        "linear",
        check(&p, |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            scalarize(t, y)
        }),
    ));
    out.push((
        "linear without bias",
        check(&p, |t, v| {
            let y = t.linear(v[0], v[1], None)?;
            scalarize(t, y)
        }),
    ));

    let p = group(2, &[("a", &[3, 3]), ("b", &[3, 3])]);
    out.push((
        "add + reshape",
        check(&p, |t, v| {
            let s = t.add(v[0], v[1])?;
            let r = t.reshape(s, &[1, 9])?;
            scalarize(t, r)
        }),
    ));

    let p = group(3, &[("x", &[6, 5])]);
    out.push((
        "leaky_relu",
        check(&p, |t, v| {
            let y = t.leaky_relu(v[0], SLOPE);
            scalarize(t, y)
        }),
    ));

    let g = graph(12, 4, 4);
    let p = group(4, &[("x", &[12, 3])]);
    out.push((
        "gather_neighbors",
        check(&p, |t, v| {
            let y = t.gather_neighbors(v[0], &g)?;
            scalarize(t, y)
        }),
    ));
    out.push((
        "edge_features",
        check(&p, |t, v| {
            let y = t.edge_features(v[0], &g)?;
            scalarize(t, y)
        }),
    ));

    let g = graph(15, 5, 5);
    let p = group(5, &[("x", &[15, 4])]);
    out.push((
        "neighborhood_max_pool",
        check(&p, |t, v| {
            let s = t.gather_neighbors(v[0], &g)?;
            let y = t.neighborhood_max_pool(s)?;
            scalarize(t, y)
        }),
    ));
    out.push((
        "neighbor_max",
        check(&p, |t, v| {
            let y = t.neighbor_max(v[0], &g)?;
            scalarize(t, y)
        }),
    ));

    let g = graph(14, 4, 6);
    let p = group(6, &[("x", &[14, 3]), ("w", &[6, 5]), ("b", &[5])]);
    out.push((
        "edge_conv",
        check(&p, |t, v| {
            let y = t.edge_conv(v[0], v[1], v[2], &g, SLOPE)?;
            scalarize(t, y)
        }),
    ));

    let p = group(7, &[("a", &[6, 3]), ("b", &[6, 2])]);
    out.push((
        "concat + global_max_pool + replicate",
        check(&p, |t, v| {
            let c = t.concat_channels(&[v[0], v[1]])?;
            let m = t.global_max_pool(c)?;
            let r = t.replicate_rows(m, 4)?;
            scalarize(t, r)
        }),
    ));

    let p = group(8, &[("z", &[7, 4])]);
    let targets = [0, 3, 1, 1, 2, 0, 3];
    let w = [0.1, 0.3, 0.05, 0.2, 0.15, 0.1, 0.1];
    out.push((
        "softmax_cross_entropy",
        check(&p, |t, v| t.softmax_cross_entropy(v[0], &targets)),
    ));
    out.push((
        "weighted_softmax_cross_entropy",
        check(&p, |t, v| t.weighted_softmax_cross_entropy(v[0], &targets, &w)),
    ));

    let p = group(9, &[("x", &[5, 3])]);
    out.push((
        "center_columns",
        check(&p, |t, v| {
            let c = t.center_columns(v[0])?;
            scalarize(t, c)
        }),
    ));
    out.push(("sum", check(&p, |t, v| Ok(t.sum(v[0])))));
    out
}

/// Tiny network on a sphere, with the transformer moved off its zero
/// initialization so its inner weights receive gradient.
pub fn model_fixture(n: usize, seed: u64) -> (ModelInput, SrgNet) {
    let cloud = fixtures::sphere(n, seed);
    let config = ModelConfig::tiny(4);
    let input = ModelInput::new(&cloud, config.k_graph).unwrap();
    let mut net = SrgNet::init(config, seed).unwrap();
    let i = net.params.index_of("tnet.out.w").unwrap();
    let mut r = rng(seed);
    net.params
        .value_mut(i)
        .data_mut()
        .iter_mut()
        .for_each(|w| *w = r.random_range(-0.1..0.1));
    (input, net)
}

/// Cross-entropy of the whole network on a 64-point cloud.
pub fn model_report() -> GradCheckReport {
    let (input, net) = model_fixture(64, 21);
    let targets: Vec<usize> = (0..64).map(|i| (i * 7) % 4).collect();
    let config = net.config.clone();
    check(&net.params, |t, v| {
        let out = srgnet_core::model::forward(t, &net.params, v, &input, &config)?;
        t.softmax_cross_entropy(out.logits, &targets)
    })
}
