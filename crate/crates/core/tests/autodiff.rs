#[path = "support/gradcases.rs"]
mod gradcases;

use gradcases::{graph, group, model_fixture, random_tensor, rng, scalarize, MODEL_TOL, PRIMITIVE_TOL, SLOPE};
use srgnet_core::nn::{finite_difference_check, GradCheckOptions, ParamGroup, Tape, Tensor, Var};
use srgnet_core::{NeighborGraph, Result};

#[test]
fn every_primitive_passes_gradient_check() {
    let reports = gradcases::primitive_reports();
    assert!(reports.len() >= 14);
    for (name, report) in reports {
        assert!(report.checked > 0, "{name}: nothing checked");
        assert!(report.passes(PRIMITIVE_TOL), "{name}: {report:?}");
    }
}

#[test]
fn corrupted_gradient_is_flagged() {
    let p = group(10, &[("x", &[4, 3]), ("w", &[3, 2])]);
    let f = |t: &mut Tape, v: &[Var]| {
        let y = t.linear(v[0], v[1], None)?;
        scalarize(t, y)
    };
    let mut tape = Tape::new();
    let vars = p.attach(&mut tape);
    let out = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let mut analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get(v).unwrap().to_vec()).collect();
    analytic[1].iter_mut().for_each(|g| *g = -*g);
    let report = finite_difference_check(&p, &analytic, f, &GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_error > 0.5, "{report:?}");
    assert_eq!(report.worst.as_ref().map(|w| w.0.as_str()), Some("w"));
}

#[test]
fn fused_edge_conv_equals_composition() {
    let g = graph(20, 5, 11);
    let p = group(11, &[("x", &[20, 4]), ("w", &[8, 6]), ("b", &[6])]);
    let fused = |t: &mut Tape, v: &[Var]| t.edge_conv(v[0], v[1], v[2], &g, SLOPE);
    let composed = |t: &mut Tape, v: &[Var]| {
        let e = t.edge_features(v[0], &g)?;
        let flat = t.reshape(e, &[20 * 5, 8])?;
        let z = t.linear(flat, v[1], Some(v[2]))?;
        let z = t.reshape(z, &[20, 5, 6])?;
        let a = t.leaky_relu(z, SLOPE);
        t.neighborhood_max_pool(a)
    };
    let run = |f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>| {
        let mut tape = Tape::new();
        let vars = p.attach(&mut tape);
        let y = f(&mut tape, &vars).unwrap();
        let value = tape.value(y).clone();
        let s = scalarize(&mut tape, y).unwrap();
        let grads = tape.backward(s).unwrap();
        let gs: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get(v).unwrap().to_vec()).collect();
        (value, gs)
    };
    let (yf, gf) = run(&fused);
    let (yc, gc) = run(&composed);
    assert_eq!(yf.shape(), yc.shape());
    for (a, b) in yf.data().iter().zip(yc.data()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
    for (ga, gb) in gf.iter().zip(&gc) {
        for (a, b) in ga.iter().zip(gb) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn edge_features_two_point_example() {
    // x = [0, 1], each point the other's only neighbor
    let g = NeighborGraph::new(1, vec![1, 0], vec![1.0, 1.0]).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[2, 1], vec![0.0, 1.0]).unwrap());
    let e = tape.edge_features(x, &g).unwrap();
    assert_eq!(tape.value(e).shape(), &[2, 1, 2]);
    assert_eq!(tape.value(e).data(), &[0.0, -1.0, 1.0, 1.0]);
}

#[test]
fn edge_features_match_reference_loop() {
    let n = 10;
    let c = 3;
    let g = graph(n, 3, 12);
    let mut r = rng(12);
    let x = random_tensor(&mut r, &[n, c]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let e = tape.edge_features(xv, &g).unwrap();
    let got = tape.value(e).data();
    let mut idx = 0;
    for i in 0..n {
        for &j in g.row(i) {
            for ch in 0..c {
                assert_eq!(got[idx + ch], x.get2(i, ch));
                assert_eq!(got[idx + c + ch], x.get2(i, ch) - x.get2(j, ch));
            }
            idx += 2 * c;
        }
    }
}

#[test]
fn constant_field_has_zero_differences() {
    let g = graph(8, 3, 13);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(&[8, 2], 0.7));
    let e = tape.edge_features(x, &g).unwrap();
    for slot in tape.value(e).data().chunks(4) {
        assert_eq!(&slot[2..], &[0.0, 0.0]);
    }
}

#[test]
fn sgd_momentum_hand_example() {
    let mut p = ParamGroup::new();
    p.insert("w", Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
    p.set_grad(0, vec![0.5]).unwrap();
    p.sgd_step(0.1, 0.9).unwrap();
    // v = 0.5, w = 1 − 0.05
    assert!((p.value(0).data()[0] - 0.95).abs() < 1e-15);
    p.set_grad(0, vec![0.5]).unwrap();
    p.sgd_step(0.1, 0.9).unwrap();
    // v = 0.9·0.5 + 0.5 = 0.95, w = 0.95 − 0.095
    assert!((p.value(0).data()[0] - 0.855).abs() < 1e-15);
    assert!(p.sgd_step(0.1, 0.9).is_err(), "gradients are consumed by a step");
}

#[test]
fn full_model_loss_gradient() {
    let report = gradcases::model_report();
    assert!(report.checked > 500, "{report:?}");
    assert!(report.passes(MODEL_TOL), "{report:?}");
}

#[test]
fn every_parameter_receives_gradient() {
    let (input, net) = model_fixture(48, 22);
    let (mut tape, vars, out) = net.forward(&input).unwrap();
    let targets: Vec<usize> = (0..48).map(|i| i % 4).collect();
    let loss = tape.softmax_cross_entropy(out.logits, &targets).unwrap();
    let grads = tape.backward(loss).unwrap();
    for (i, &v) in vars.iter().enumerate() {
        let g = grads.get(v).unwrap_or(&[]);
        assert!(g.iter().any(|x| *x != 0.0), "{} has no gradient", net.params.name(i));
    }
}
