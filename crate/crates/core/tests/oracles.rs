mod common;

use std::collections::{HashMap, HashSet};

use common::*;
use fsp_core::dataset::{filter_usable_photos, split_photos, Label, Split, SplitRatios};
use fsp_core::evaluation::{
    auc_counts, average_precision_ratio, best_threshold, cv_with_folds, eer, stratified_folds, Scored,
};
use fsp_core::pipeline::fsp_pairs;
use fsp_core::scorer::{backward, forward, forward_logits, loss, sgd_step, Dense, ScorerParams};
use proptest::prelude::*;

fn dense(out_dim: usize, in_dim: usize, weight: &[f64], bias: &[f64]) -> Dense {
    Dense {
        out_dim,
        in_dim,
        weight: weight.to_vec(),
        bias: bias.to_vec(),
    }
}

#[test]
fn hand_computed_forward() {
    let params = ScorerParams {
        input_norm: None,
        projection: dense(1, 2, &[0.5, -1.0], &[0.25]),
        projection_b: None,
        hidden1: dense(1, 2, &[2.0, 1.0], &[-0.1]),
        hidden2: dense(1, 1, &[3.0], &[0.3]),
        output: dense(2, 1, &[1.0, -1.0], &[0.0, 0.5]),
    };
    // pa = 0.25, pb = relu(-2.25) = 0, h1 = 0.4, h2 = 1.5, z = (1.5, -1.0)
    let z = forward_logits(&params, &[2.0, 1.0], &[1.0, 3.0], None).unwrap();
    assert!((z[0] - 1.5).abs() < 1e-12 && (z[1] + 1.0).abs() < 1e-12, "{z:?}");
    let p = forward(&params, &[2.0, 1.0], &[1.0, 3.0], None).unwrap();
    assert!((p[0] - 1.0 / (1.0 + (-2.5f64).exp())).abs() < 1e-12);
    assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
    assert!((loss(z, true) - (1.0 + (-2.5f64).exp()).ln()).abs() < 1e-12);
    assert!((loss(z, false) - (1.0 + 2.5f64.exp()).ln()).abs() < 1e-12);

    // Halving the first hidden unit through the mask halves h1.
    let z = forward_logits(&params, &[2.0, 1.0], &[1.0, 3.0], Some(&[0.5])).unwrap();
    assert!((z[0] - 0.9).abs() < 1e-12 && (z[1] + 0.4).abs() < 1e-12, "{z:?}");
}

#[test]
fn forward_matches_reference_loops() {
    let mut r = rng(1);
    for case in 0..200 {
        let (cfg, params) = random_params(&mut r, case % 2 == 0, case % 3 == 0);
        let va = random_vec(&mut r, cfg.input_dim);
        let vb = random_vec(&mut r, cfg.input_dim);
        let mask = random_mask(&mut r, cfg.hidden_dims.0, 0.3);
        for m in [None, Some(mask.as_slice())] {
            let got = forward_logits(&params, &va, &vb, m).unwrap();
            let want = reference_logits(&params, &va, &vb, m);
            for k in 0..2 {
                assert!(
                    (got[k] - want[k]).abs() <= 1e-12 * want[k].abs().max(1.0),
                    "case {case}"
                );
            }
        }
    }
}

#[test]
fn shapes_follow_configuration() {
    let mut r = rng(2);
    let (cfg, shared) = random_params(&mut r, true, false);
    let (d, p, (h1, h2)) = (cfg.input_dim, cfg.proj_dim, cfg.hidden_dims);
    assert_eq!(layer_shapes(&shared), vec![(p, d), (h1, 2 * p), (h2, h1), (2, h2)]);
    let separate = ScorerParams {
        projection_b: Some(shared.projection.clone()),
        ..shared
    };
    assert_eq!(layer_shapes(&separate)[1], (p, d));
}

#[test]
fn gradients_match_central_differences() {
    let mut r = rng(3);
    for case in 0..60 {
        let shared = case % 2 == 0;
        let (cfg, params) = random_params(&mut r, shared, case % 4 < 2);
        let va = random_vec(&mut r, cfg.input_dim);
        let vb = random_vec(&mut r, cfg.input_dim);
        let mask = random_mask(&mut r, cfg.hidden_dims.0, 0.25);
        let positive = case % 3 == 0;
        for m in [None, Some(mask.as_slice())] {
            let err = gradient_check(&params, &va, &vb, positive, m, 1e-5, 1e-6);
            assert!(
                err <= 1e-4,
                "case {case} shared={shared} mask={}: relative error {err}",
                m.is_some()
            );
        }
    }
}

#[test]
fn shared_gradient_is_sum_of_tower_gradients() {
    let mut r = rng(4);
    for _ in 0..50 {
        let (cfg, shared) = random_params(&mut r, true, false);
        let towers = ScorerParams {
            projection_b: Some(shared.projection.clone()),
            ..shared.clone()
        };
        let va = random_vec(&mut r, cfg.input_dim);
        let vb = random_vec(&mut r, cfg.input_dim);
        let (ls, gs) = backward(&shared, &va, &vb, true, None).unwrap();
        let (lt, gt) = backward(&towers, &va, &vb, true, None).unwrap();
        assert_eq!(ls, lt);
        let summed: Vec<f64> = gt.layers[0]
            .flat()
            .zip(gt.layers[1].flat())
            .map(|(a, b)| a + b)
            .collect();
        for (a, b) in gs.layers[0].flat().zip(&summed) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        for (a, b) in gs.layers[1..].iter().zip(&gt.layers[2..]) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn small_steps_on_one_example_never_raise_loss() {
    let mut r = rng(5);
    for case in 0..20 {
        let (cfg, mut params) = random_params(&mut r, case % 2 == 0, false);
        let va = random_vec(&mut r, cfg.input_dim);
        let vb = random_vec(&mut r, cfg.input_dim);
        let positive = case % 2 == 1;
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            let (l, g) = backward(&params, &va, &vb, positive, None).unwrap();
            assert!(l <= prev + 1e-12, "case {case} step {step}: {l} > {prev}");
            prev = l;
            sgd_step(&mut params, &g, 1e-3);
        }
    }
}

fn as_ratio((num, den): (u128, u128)) -> Q {
    Q::new(num as i128, den as i128)
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng(6);
    for case in 0..400 {
        let items = random_scored(&mut r, 1, 30);
        let c = auc_counts(&items).unwrap();
        assert_eq!(
            Q::new(c.twice_concordant as i128, 2 * c.pairs as i128),
            brute_auc(&items),
            "case {case}"
        );

        let ap = average_precision_ratio(&items).unwrap().expect("fits");
        assert_eq!(as_ratio(ap), brute_ap(&items), "case {case}");

        let (t, fp, fn_) = brute_eer(&items);
        let p = items.iter().filter(|s| s.1).count() as f64;
        let n = items.len() as f64 - p;
        let e = eer(&items).unwrap();
        assert_eq!(e.threshold, t, "case {case}");
        assert_eq!(e.rate, (fp as f64 / n + fn_ as f64 / p) / 2.0, "case {case}");

        let (bt, correct) = best_threshold(&items).unwrap();
        assert_eq!((bt, correct as usize), brute_best_threshold(&items), "case {case}");
    }
}

#[test]
fn cross_validation_matches_brute_force() {
    let mut r = rng(7);
    for case in 0..200 {
        let items = random_scored(&mut r, 5, 30);
        let folds = 5;
        let assignment = stratified_folds(&items, folds, case).unwrap();
        for k in 0..folds {
            let members: Vec<_> = items.iter().zip(&assignment).filter(|(_, f)| **f == k).collect();
            assert!(members.iter().any(|(s, _)| s.1) && members.iter().any(|(s, _)| !s.1));
        }
        let cv = cv_with_folds(&items, &assignment, folds).unwrap();
        let want = brute_cv(&items, &assignment, folds);
        assert_eq!(
            cv.thresholds,
            want.iter().map(|w| w.0).collect::<Vec<_>>(),
            "case {case}"
        );
        assert_eq!(
            cv.fold_accuracies,
            want.iter().map(|w| w.1).collect::<Vec<_>>(),
            "case {case}"
        );
        assert_eq!(cv.mean, cv.fold_accuracies.iter().sum::<f64>() / folds as f64);
    }
}

#[test]
fn auc_of_perfect_and_reversed_rankings() {
    let items: Vec<(f64, bool)> = (0..10).map(|i| (i as f64, i >= 5)).collect();
    assert_eq!(fsp_core::evaluation::roc_auc(&items).unwrap(), 1.0);
    let flipped: Vec<(f64, bool)> = items.iter().map(|s| (-s.0, s.1)).collect();
    assert_eq!(fsp_core::evaluation::roc_auc(&flipped).unwrap(), 0.0);
    let tied: Vec<(f64, bool)> = items.iter().map(|s| (0.5, s.1)).collect();
    assert_eq!(fsp_core::evaluation::roc_auc(&tied).unwrap(), 0.5);
}

fn scored_sets() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((0u8..=16, any::<bool>()), 2..40)
        .prop_filter("both classes", |v| v.iter().any(|s| s.1) && v.iter().any(|s| !s.1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (f64::from(s) / 16.0, l)).collect())
}

proptest! {
    #[test]
    fn swapping_labels_reflects_auc(items in scored_sets()) {
        let c = auc_counts(&items).unwrap();
        let swapped: Vec<(f64, bool)> = items.iter().map(|s| (s.0, !s.1)).collect();
        let d = auc_counts(&swapped).unwrap();
        prop_assert_eq!(c.pairs, d.pairs);
        prop_assert_eq!(c.twice_concordant + d.twice_concordant, 2 * c.pairs);
    }

    #[test]
    fn monotone_transforms_keep_rank_metrics(items in scored_sets(), k in 0.1f64..5.0) {
        let moved: Vec<(f64, bool)> = items.iter().map(|s| ((k * s.0).exp() - 3.0, s.1)).collect();
        prop_assert_eq!(auc_counts(&items).unwrap(), auc_counts(&moved).unwrap());
        prop_assert_eq!(average_precision_ratio(&items).unwrap(), average_precision_ratio(&moved).unwrap());
        prop_assert_eq!(eer(&items).unwrap().rate, eer(&moved).unwrap().rate);
    }

    #[test]
    fn fsp_pairs_respect_protocol(seed in any::<u64>(), usable in 20usize..40, unusable in 0usize..8) {
        let mut r = rng(seed);
        let raw = random_manifest(&mut r, usable, unusable);
        let m = filter_usable_photos(&raw, 50);
        prop_assert_eq!(m.photos.len(), usable);
        prop_assert!(m.photos.iter().all(|p| p.faces.len() >= 2 && p.faces.iter().all(|f| f.bbox.w >= 50)));

        let split = split_photos(&m, SplitRatios::default(), seed).unwrap();
        prop_assert_eq!(split.len(), usable);
        let photo_split: HashMap<String, Split> = split.0.clone().into_iter().collect();
        let index = m.face_index();
        let photo = |face: &str| m.photos[index[face].photo].photo_id.clone();

        let mut seen_faces: HashMap<Split, HashSet<String>> = HashMap::new();
        for subset in Split::ALL {
            let pairs = fsp_pairs(&m, &split, subset, seed).unwrap();
            let pos: Vec<_> = pairs.iter().filter(|p| p.label == Label::Positive).collect();
            let neg: Vec<_> = pairs.iter().filter(|p| p.label == Label::Negative).collect();
            let expected: usize = m
                .photos
                .iter()
                .filter(|p| photo_split[&p.photo_id] == subset)
                .map(|p| p.faces.len() * (p.faces.len() - 1) / 2)
                .sum();
            prop_assert_eq!(pos.len(), expected);
            prop_assert_eq!(neg.len(), pos.len());
            for p in &pos {
                prop_assert_eq!(photo(&p.face_a), photo(&p.face_b));
            }
            for p in &neg {
                prop_assert_ne!(photo(&p.face_a), photo(&p.face_b));
            }
            for p in &pairs {
                for f in [&p.face_a, &p.face_b] {
                    prop_assert_eq!(photo_split[&photo(f)], subset);
                    seen_faces.entry(subset).or_default().insert(f.clone());
                }
            }
        }
        let subsets: Vec<_> = seen_faces.values().collect();
        for i in 0..subsets.len() {
            for j in i + 1..subsets.len() {
                prop_assert!(subsets[i].is_disjoint(subsets[j]));
            }
        }
    }

    #[test]
    fn stratified_folds_balance_classes(items in scored_sets(), seed in any::<u64>(), folds in 2usize..6) {
        let p = items.iter().filter(|s| s.1).count();
        let n = items.len() - p;
        match stratified_folds(&items, folds, seed) {
            Err(_) => prop_assert!(p < folds || n < folds),
            Ok(a) => {
                for k in 0..folds {
                    let kp = items.iter().zip(&a).filter(|(s, f)| s.is_positive() && **f == k).count();
                    let kn = items.iter().zip(&a).filter(|(s, f)| !s.is_positive() && **f == k).count();
                    prop_assert!(kp == p / folds || kp == p / folds + 1);
                    prop_assert!(kn == n / folds || kn == n / folds + 1);
                }
            }
        }
    }
}
