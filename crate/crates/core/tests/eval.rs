use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srgnet_core::eval::{confusion, hungarian, matched_accuracy, miou};
use srgnet_core::fixtures;
use srgnet_core::kmeans::{inertia_of, kmeans, KmeansOptions};
use srgnet_core::LabelMap;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

fn exhaustive_min(cost: &[f64], n: usize) -> f64 {
    permutations(n)
        .iter()
        .map(|p| (0..n).map(|r| cost[r * n + p[r]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn hungarian_matches_exhaustive_search_on_random_5x5() {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..150 {
        let cost: Vec<f64> = if case % 3 == 0 {
            // small integers: many tied optima
            (0..25).map(|_| r.random_range(0..4) as f64).collect()
        } else {
            (0..25).map(|_| r.random_range(-10.0..10.0)).collect()
        };
        let a = hungarian(&cost, 5, 5).unwrap();
        let want = exhaustive_min(&cost, 5);
        assert!((a.total - want).abs() <= 1e-9, "case {case}: {} vs {want}", a.total);
        let mut cols: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
        cols.sort_unstable();
        assert_eq!(cols, vec![0, 1, 2, 3, 4]);
    }
}

#[test]
fn hungarian_picks_lexicographically_smallest_optimum() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let cost: Vec<f64> = (0..16).map(|_| r.random_range(0..3) as f64).collect();
        let best = exhaustive_min(&cost, 4);
        let first = permutations(4)
            .into_iter()
            .filter(|p| ((0..4).map(|i| cost[i * 4 + p[i]]).sum::<f64>() - best).abs() < 1e-12)
            .min()
            .unwrap();
        let got: Vec<usize> = hungarian(&cost, 4, 4).unwrap().pairs.iter().map(|p| p.1).collect();
        assert_eq!(got, first);
    }
}

#[test]
fn hand_computed_three_quarter_case() {
    let pred = LabelMap::from_labels(vec![0, 0, 1, 2]);
    let gt = LabelMap::from_labels(vec![0, 0, 1, 1]);
    let cm = confusion(&pred, &gt).unwrap();
    assert_eq!((cm.predicted, cm.truth), (3, 2));
    assert_eq!(cm.row(0), &[2, 0]);
    assert_eq!(cm.row(1), &[0, 1]);
    assert_eq!(cm.row(2), &[0, 1]);
    let r = miou(&pred, &gt).unwrap();
    // part 0: {0,1} vs {0,1} -> 2/2; part 1: {2} vs {2,3} -> 1/2
    assert_eq!(r.per_part, vec![1.0, 0.5]);
    assert_eq!(r.miou, 0.75);
}

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n..=n)
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::default()
    })]

    #[test]
    fn relabeled_truth_scores_exactly_one(gt in labels(40, 5), seed in 0u64..1000) {
        let gt = LabelMap::compacted(gt);
        let mut perm: Vec<usize> = (0..gt.k()).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let pred = LabelMap::from_labels(gt.labels().iter().map(|&l| perm[l]).collect());
        prop_assert_eq!(miou(&pred, &gt).unwrap().miou, 1.0);
        prop_assert_eq!(matched_accuracy(&pred, &gt).unwrap(), 1.0);
    }

    #[test]
    fn miou_ignores_predicted_label_names(pred in labels(30, 4), gt in labels(30, 3), shift in 1usize..5) {
        let pred = LabelMap::compacted(pred);
        let gt = LabelMap::compacted(gt);
        let k = pred.k();
        let renamed = LabelMap::from_labels(pred.labels().iter().map(|&l| (l + shift) % k).collect());
        let a = miou(&pred, &gt).unwrap().miou;
        let b = miou(&renamed, &gt).unwrap().miou;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn miou_ignores_point_order(pred in labels(30, 4), gt in labels(30, 3), seed in 0u64..1000) {
        let mut order: Vec<usize> = (0..30).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let pick = |v: &[usize]| LabelMap::from_labels(order.iter().map(|&i| v[i]).collect());
        let a = miou(&LabelMap::from_labels(pred.clone()), &LabelMap::from_labels(gt.clone())).unwrap();
        let b = miou(&pick(&pred), &pick(&gt)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn confusion_margins_are_label_counts(pred in labels(25, 4), gt in labels(25, 3)) {
        let (pred, gt) = (LabelMap::from_labels(pred), LabelMap::from_labels(gt));
        let cm = confusion(&pred, &gt).unwrap();
        prop_assert_eq!(cm.total(), 25);
        let pc = pred.counts();
        let gc = gt.counts();
        for (p, &count) in pc.iter().enumerate() {
            prop_assert_eq!(cm.row_sum(p), count);
        }
        for (g, &count) in gc.iter().enumerate() {
            prop_assert_eq!(cm.col_sum(g), count);
        }
    }

    #[test]
    fn lloyd_inertia_never_increases(seed in 0u64..200, k in 1usize..7) {
        let pts = fixtures::uniform_cube(60, seed);
        let feats: Vec<f64> = pts.iter().flatten().copied().collect();
        let r = kmeans(&feats, 3, &KmeansOptions::new(k, seed)).unwrap();
        for w in r.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", r.inertia_history);
        }
        let again = inertia_of(&feats, 3, r.labels.labels(), &r.centroids);
        prop_assert!((again - r.inertia).abs() <= 1e-9 * r.inertia.max(1.0));
    }
}

#[test]
fn three_blobs_are_recovered() {
    let centers = [[0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [0.0, 4.0, 1.0]];
    for seed in 0..5 {
        let (pts, truth) = fixtures::gaussian_blobs(&centers, 200, 0.5, seed);
        let feats: Vec<f64> = pts.iter().flatten().copied().collect();
        let r = kmeans(&feats, 3, &KmeansOptions::new(3, seed)).unwrap();
        let acc = matched_accuracy(&r.labels, &truth).unwrap();
        assert!(acc >= 0.99, "seed {seed}: agreement {acc}");
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
}
