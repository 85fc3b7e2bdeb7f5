use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;
use srgnet_core::eval::matched_accuracy;
use srgnet_core::model::ModelConfig;
use srgnet_core::spatial::knn_graph;
use srgnet_core::srg::{self, SrgSettings};
use srgnet_core::train::{infer, refine_targets, train, StopReason, TrainConfig, TrainOutcome};
use srgnet_core::{fixtures, LabelMap, PointCloud};

fn label_pair(n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (
        prop::collection::vec(0usize..5, n..=n),
        prop::collection::vec(0usize..4, n..=n),
    )
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::default()
    })]

    #[test]
    fn refine_is_idempotent_and_invents_nothing((pred, clusters) in label_pair(40)) {
        let pred = LabelMap::new(pred, 5).unwrap();
        let clusters = LabelMap::from_labels(clusters);
        let once = refine_targets(&pred, &clusters).unwrap();
        prop_assert_eq!(refine_targets(&once, &clusters).unwrap(), once.clone());
        prop_assert_eq!(once.k(), pred.k());
        for &t in once.labels() {
            prop_assert!(pred.labels().contains(&t));
        }
        // constant inside every cluster
        for (i, &c) in clusters.labels().iter().enumerate() {
            let first = clusters.labels().iter().position(|&x| x == c).unwrap();
            prop_assert_eq!(once.get(i), once.get(first));
        }
    }

    #[test]
    fn refine_with_singleton_clusters_is_identity(pred in prop::collection::vec(0usize..6, 1..50)) {
        let pred = LabelMap::new(pred, 6).unwrap();
        let singletons = LabelMap::from_labels((0..pred.len()).collect());
        prop_assert_eq!(refine_targets(&pred, &singletons).unwrap(), pred);
    }
}

struct DihedralRun {
    cloud: PointCloud,
    clusters: LabelMap,
    outcome: TrainOutcome,
}

const DIHEDRAL_ITERATIONS: usize = 300;

fn dihedral_run() -> &'static DihedralRun {
    static RUN: OnceLock<DihedralRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let (cloud, _) = fixtures::dihedral(1000, 4);
        let graph = knn_graph(&cloud, 20).unwrap();
        let params = SrgSettings {
            target_k: Some(2),
            ..SrgSettings::default()
        }
        .resolve(&graph)
        .unwrap();
        let clusters = srg::segment(&cloud, &graph, &params).unwrap();
        assert_eq!(clusters.num_distinct(), 2);
        let config = TrainConfig {
            iterations: DIHEDRAL_ITERATIONS,
            ..TrainConfig::default()
        };
        let outcome = train(&cloud, &clusters, &ModelConfig::tiny(2), &config).unwrap();
        DihedralRun {
            cloud,
            clusters,
            outcome,
        }
    })
}

#[test]
fn dihedral_prediction_agrees_with_clusters() {
    let run = dihedral_run();
    assert_eq!(run.outcome.history.stop, StopReason::Completed);
    assert_eq!(run.outcome.history.len(), DIHEDRAL_ITERATIONS);
    let agreement = matched_accuracy(&run.outcome.labels, &run.clusters).unwrap();
    assert!(agreement >= 0.95, "agreement {agreement}");
}

#[test]
fn loss_is_finite_and_trends_down() {
    let h = &dihedral_run().outcome.history;
    assert!(h.records.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0));
    let n = h.len();
    assert!(h.mean_loss(n - 50..n) <= h.mean_loss(0..50));
    assert!(dihedral_run().outcome.net.params.is_finite());
}

#[test]
fn infer_reproduces_final_training_labels() {
    let run = dihedral_run();
    let labels = infer(&run.outcome.net, &run.cloud).unwrap();
    assert_eq!(labels, run.outcome.labels);
    assert_eq!(labels.len(), run.cloud.len());
    assert!(labels.is_dense());
}

/// Absolute coordinates enter the first edge convolution, so a translated
/// copy is not guaranteed to get the same labels. This measures how much
/// they change and only checks the output is well formed.
#[test]
fn translated_copy_is_measured() {
    let run = dihedral_run();
    let shifted: Vec<_> = run
        .cloud
        .positions()
        .iter()
        .map(|p| [p[0] + 0.3, p[1] - 0.2, p[2] + 0.1])
        .collect();
    let shifted = PointCloud::new(shifted, run.cloud.normals().map(|n| n.to_vec()), "shifted").unwrap();
    let labels = infer(&run.outcome.net, &shifted).unwrap();
    assert_eq!(labels.len(), run.cloud.len());
    assert!(labels.is_dense());
    let same = matched_accuracy(&labels, &run.outcome.labels).unwrap();
    println!("translation (0.3, -0.2, 0.1): matched label agreement {same:.4}");
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (cloud, truth) = fixtures::three_part_figure(300, 2);
    let config = TrainConfig {
        iterations: 12,
        warmup: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let a = train(&cloud, &truth, &ModelConfig::tiny(4), &config).unwrap();
    let b = train(&cloud, &truth, &ModelConfig::tiny(4), &config).unwrap();
    assert_eq!(a, b);
    let c = train(
        &cloud,
        &truth,
        &ModelConfig::tiny(4),
        &TrainConfig { seed: 6, ..config },
    )
    .unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn singleton_clusters_reduce_to_self_reinforcement() {
    // every point its own cluster: the target is always the prediction
    let cloud = fixtures::sphere(8, 1);
    let model = ModelConfig {
        k_graph: 3,
        ..ModelConfig::tiny(8)
    };
    let clusters = LabelMap::from_labels((0..8).collect());
    let config = TrainConfig {
        iterations: 20,
        warmup: 0,
        min_labels: 1,
        ..TrainConfig::default()
    };
    let out = train(&cloud, &clusters, &model, &config).unwrap();
    assert_eq!(out.history.len(), 20);
    assert!(out.history.records.iter().all(|r| r.agreement == 1.0));
    assert!(out.history.records.last().unwrap().loss <= out.history.records[0].loss);
}

#[test]
fn too_many_clusters_for_the_head_is_rejected() {
    let (cloud, _) = fixtures::dihedral(50, 0);
    let clusters = LabelMap::from_labels((0..50).map(|i| i % 3).collect());
    let config = TrainConfig {
        iterations: 1,
        ..TrainConfig::default()
    };
    assert!(train(&cloud, &clusters, &ModelConfig::tiny(2), &config).is_err());
}
