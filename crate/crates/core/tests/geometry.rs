use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;
use srgnet_core::fixtures;
use srgnet_core::normals::estimate_normals;
use srgnet_core::sampling::{downsample, downsample_indices, farthest_point_sampling, DownsampleMethod};
use srgnet_core::spatial::{knn_bruteforce, knn_graph, knn_graph_points, KdTree};
use srgnet_core::srg::{self, SrgSettings};
use srgnet_core::{eval, validate_cloud, Point3, PointCloud};

fn coord() -> impl Strategy<Value = f64> {
    // coarse grid values so that ties actually occur
    prop_oneof![(-20i32..20).prop_map(|v| v as f64 * 0.25), -5.0f64..5.0]
}

fn cloud_points(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec([coord(), coord(), coord()], 2..max)
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::default()
    })]

    #[test]
    fn kd_tree_matches_bruteforce(pts in cloud_points(120), q in [coord(), coord(), coord()], k in 1usize..12, bucket in 1usize..9) {
        let k = k.min(pts.len());
        let tree = KdTree::with_bucket_size(&pts, bucket).unwrap();
        let got: Vec<usize> = tree.knn(q, k).unwrap().iter().map(|n| n.index).collect();
        let want: Vec<usize> = knn_bruteforce(&pts, q, k).unwrap().iter().map(|n| n.index).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn graph_rows_are_sorted_and_exclude_self(pts in cloud_points(80), k in 1usize..8) {
        let k = k.min(pts.len() - 1);
        prop_assume!(k >= 1);
        let g = knn_graph_points(&pts, k).unwrap();
        for i in 0..pts.len() {
            prop_assert!(!g.row(i).contains(&i));
            let d = g.distances_row(i);
            prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
            for (slot, pair) in d.windows(2).enumerate() {
                if pair[0] == pair[1] {
                    prop_assert!(g.row(i)[slot] < g.row(i)[slot + 1]);
                }
            }
        }
        let sym = g.symmetrized();
        for i in 0..pts.len() {
            for &j in g.row(i) {
                prop_assert!(sym[i].contains(&j) && sym[j].contains(&i));
            }
        }
    }

    #[test]
    fn validation_is_idempotent(pts in cloud_points(20), bad in 0usize..20) {
        let first = validate_cloud(&pts, None);
        prop_assert_eq!(first.clone(), validate_cloud(&pts, None));
        prop_assert!(first.is_ok());
        let mut broken = pts.clone();
        let i = bad % broken.len();
        broken[i][1] = f64::NAN;
        prop_assert_eq!(validate_cloud(&broken, None), Err(srgnet_core::Error::NonFinite { index: i }));
    }

    #[test]
    fn downsample_is_a_deterministic_subset(pts in cloud_points(60), n in 1usize..70, seed in 0u64..50) {
        let cloud = PointCloud::from_positions(pts).unwrap();
        for method in [DownsampleMethod::Random, DownsampleMethod::Fps] {
            let a = downsample(&cloud, n, method, seed).unwrap();
            let b = downsample(&cloud, n, method, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), n.min(cloud.len()));
            for p in a.positions() {
                prop_assert!(cloud.positions().contains(p));
            }
        }
    }
}

#[test]
fn uniform_cube_knn_is_index_exact() {
    let pts = fixtures::uniform_cube(1000, 7);
    let tree = KdTree::build(&pts).unwrap();
    let queries = fixtures::uniform_cube(100, 8);
    for q in queries {
        let got: Vec<_> = tree.knn(q, 20).unwrap().iter().map(|n| n.index).collect();
        let want: Vec<_> = knn_bruteforce(&pts, q, 20).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn fps_keeps_seed_and_separates_points() {
    let pts = fixtures::uniform_cube(300, 3);
    let cloud = PointCloud::from_positions(pts).unwrap();
    let keep = farthest_point_sampling(&cloud, 25);
    assert_eq!(keep[0], 0);
    let p = cloud.positions();
    for (a, &i) in keep.iter().enumerate() {
        for &j in &keep[a + 1..] {
            assert!(srgnet_core::spatial::knn_bruteforce(&[p[i]], p[j], 1).unwrap()[0].distance > 0.0);
        }
    }
    assert_eq!(downsample_indices(&cloud, 25, DownsampleMethod::Fps, 99).unwrap(), keep);
}

fn angle(a: Point3, b: Point3) -> f64 {
    let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).abs().min(1.0);
    d.acos()
}

#[test]
fn plane_normals_interior_exact() {
    let cloud = fixtures::plane_grid(20, 20, 0.1);
    let graph = knn_graph(&cloud, 8).unwrap();
    let est = estimate_normals(&cloud, &graph).unwrap();
    let n = est.cloud.normals().unwrap();
    for (i, p) in cloud.positions().iter().enumerate() {
        let interior = p[0] > 0.15 && p[0] < 1.75 && p[1] > 0.15 && p[1] < 1.75;
        if interior {
            assert!(angle(n[i], [0.0, 0.0, 1.0]) < 1e-6, "point {i}");
        }
    }
}

#[test]
fn sphere_normals_median_error() {
    let cloud = fixtures::sphere(2048, 5).without_normals();
    let graph = knn_graph(&cloud, 16).unwrap();
    let est = estimate_normals(&cloud, &graph).unwrap();
    let mut errs: Vec<f64> = est
        .cloud
        .normals()
        .unwrap()
        .iter()
        .zip(cloud.positions())
        .map(|(n, p)| angle(*n, *p).to_degrees())
        .collect();
    errs.sort_by(f64::total_cmp);
    assert!(errs[errs.len() / 2] < 5.0, "median {}", errs[errs.len() / 2]);
}

fn dihedral_srg(seed: u64) -> (srgnet_core::LabelMap, srgnet_core::LabelMap, srgnet_core::NeighborGraph) {
    let (cloud, truth) = fixtures::dihedral(4000, 1);
    let graph = knn_graph(&cloud, 20).unwrap();
    let params = SrgSettings {
        rng_seed: seed,
        ..SrgSettings::default()
    }
    .resolve(&graph)
    .unwrap();
    (srg::segment(&cloud, &graph, &params).unwrap(), truth, graph)
}

#[test]
fn dihedral_splits_into_two_pure_connected_clusters() {
    let (labels, truth, graph) = dihedral_srg(0);
    assert_eq!(labels.num_distinct(), 2);
    for p in eval::purity(&labels, &truth).unwrap() {
        assert!(p >= 0.99, "purity {p}");
    }
    assert!(srg::clusters_connected(&labels, &graph));
    for _ in 0..2 {
        assert_eq!(dihedral_srg(0).0, labels);
    }
}

#[test]
fn merge_seven_regions_to_two() {
    let (cloud, truth) = fixtures::dihedral(4000, 2);
    let graph = knn_graph(&cloud, 20).unwrap();
    let over = fixtures::oversegment(&cloud, &truth, &[4, 3], 5);
    assert_eq!(over.num_distinct(), 7);
    let merged = srg::merge_to_target(&cloud, &over, &graph, 2, 1).unwrap();
    assert_eq!(merged.num_distinct(), 2);
    for p in eval::purity(&merged, &truth).unwrap() {
        assert!(p >= 0.95, "purity {p}");
    }
}
