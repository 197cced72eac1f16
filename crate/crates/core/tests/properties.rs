//! Randomized invariants across modules.

mod common;

use augsubset::dataio::{parse_feature_csv, write_feature_csv};
use augsubset::harness::{auc, average_ranks, AccuracyCurve};
use augsubset::influence::{brute_force_loo, factor_for_fit, loo_influence, score_all};
use augsubset::linmodel::fit_logistic;
use augsubset::seeds::rng_from_seed;
use augsubset::selection::{
    apply_downweight, elementary_symmetric, kmeans, rank_descending, sample_kdpp,
    sample_proportional, select_topk, DownweightDivisor, DppKernel,
};
use augsubset::transforms::{rotate, translate};
use augsubset::{AugmentationFamily, Dataset, LabeledExample, ScoreMetric, ScoreVector};
use common::*;
use ndarray::Array2;
use proptest::prelude::*;

fn scores_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..10.0f64], 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn proportional_sample_is_k_distinct_indices(values in scores_strategy(30), k_frac in 0.0..=1.0f64, seed: u64) {
        let n = values.len();
        let k = ((n as f64) * k_frac) as usize;
        let s = ScoreVector::new(values, ScoreMetric::Loss, 0);
        let mut picked = sample_proportional(&s, k, &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(picked.len(), k);
        picked.sort_unstable();
        picked.dedup();
        prop_assert_eq!(picked.len(), k);
        prop_assert!(picked.iter().all(|&i| i < n));
    }

    #[test]
    fn proportional_never_picks_zero_scores_while_mass_remains(values in scores_strategy(20), seed: u64) {
        let positive = values.iter().filter(|v| **v > 0.0).count();
        let s = ScoreVector::new(values.clone(), ScoreMetric::Loss, 0);
        let picked = sample_proportional(&s, positive, &mut rng_from_seed(seed)).unwrap();
        prop_assert!(picked.iter().all(|&i| values[i] > 0.0));
    }

    #[test]
    fn topk_is_a_prefix_of_the_descending_order(values in scores_strategy(30), k_frac in 0.0..=1.0f64) {
        let k = ((values.len() as f64) * k_frac) as usize;
        let order = rank_descending(&values);
        let s = ScoreVector::new(values.clone(), ScoreMetric::Influence, 0);
        let top = select_topk(&s, k).unwrap();
        prop_assert_eq!(&top[..], &order[..k]);
        for w in order.windows(2) {
            let (a, b) = (values[w[0]], values[w[1]]);
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
    }

    #[test]
    fn downweighting_conserves_total_weight(n in 2usize..12, sizes in prop::collection::vec(1usize..6, 1..8), seed: u64) {
        let mut data = gaussian_blobs(n, 3, 1.0, seed);
        let before = data.total_weight();
        let mut r = rng(seed);
        for (f, &m) in sizes.iter().enumerate() {
            let origin = f % n;
            let members = (0..m)
                .map(|_| LabeledExample::new(vec![normal(&mut r); 3], data.examples()[origin].label, origin))
                .collect();
            let fam = AugmentationFamily { origin_id: origin, members };
            apply_downweight(&mut data, &fam, DownweightDivisor::FamilyPlusOrigin).unwrap();
        }
        prop_assert!((data.total_weight() - before).abs() <= 1e-12 * before);
    }

    #[test]
    fn translation_round_trip_keeps_the_interior(seed: u64, dx in -4i64..=4, dy in -4i64..=4) {
        let img = random_image(12, 10, seed);
        let back = translate(&translate(&img, dx, dy).unwrap(), -dx, -dy).unwrap();
        for y in 0..10i64 {
            for x in 0..12i64 {
                let kept = (0..12).contains(&(x + dx)) && (0..10).contains(&(y + dy));
                let expected = if kept { img.get(x as usize, y as usize, 0) } else { 0 };
                // pixels that left the frame are gone for good
                prop_assert_eq!(back.get(x as usize, y as usize, 0), expected);
            }
        }
    }

    #[test]
    fn four_quarter_turns_are_the_identity(seed: u64) {
        let img = random_image(9, 9, seed);
        let mut out = img.clone();
        for _ in 0..4 {
            out = rotate(&out, 90.0).unwrap();
        }
        prop_assert_eq!(out, img);
    }

    #[test]
    fn feature_csv_round_trips(n in 1usize..10, d in 1usize..5, seed: u64) {
        let data = gaussian_blobs(n.max(2), d, 1.0, seed);
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &data).unwrap();
        let back = parse_feature_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.len(), data.len());
        for (a, b) in back.examples().iter().zip(data.examples()) {
            prop_assert_eq!(&a.features, &b.features);
            prop_assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn score_csv_round_trips(values in scores_strategy(20), version in 0u64..100) {
        let s = ScoreVector::new(values, ScoreMetric::MarginAbs, version);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        prop_assert_eq!(ScoreVector::parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), s);
    }

    #[test]
    fn elementary_symmetric_matches_enumeration(vals in prop::collection::vec(0u8..6, 1..9)) {
        let eig: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
        let n = eig.len();
        let table = elementary_symmetric(&eig, n).unwrap();
        for k in 0..=n {
            prop_assert_eq!(table[k][n].to_f64(), esp_enumerated(&eig, k));
        }
    }

    #[test]
    fn kdpp_sample_is_k_distinct(seed: u64, n in 2usize..9, k_frac in 0.0..=1.0f64) {
        let mut r = rng(seed);
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| normal(&mut r)).collect()).collect();
        let l = Array2::from_shape_fn((n, n), |(i, j)| (0..n).map(|t| b[i][t] * b[j][t]).sum());
        let kernel = DppKernel::from_matrix(l).unwrap();
        let k = ((kernel.rank() as f64) * k_frac) as usize;
        let mut s = sample_kdpp(&kernel, k, &mut rng_from_seed(seed)).unwrap();
        s.sort_unstable();
        s.dedup();
        prop_assert_eq!(s.len(), k);
    }

    #[test]
    fn kmeans_assigns_every_point_and_fills_every_cluster(n in 3usize..40, k_frac in 0.0..=1.0f64, seed: u64) {
        let data = gaussian_blobs(n, 2, 3.0, seed);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let km = kmeans(&data.features(), k, seed).unwrap();
        prop_assert_eq!(km.assignments.len(), n);
        let members = km.cluster_members();
        prop_assert_eq!(members.len(), k);
        prop_assert!(members.iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn average_ranks_sum_to_the_triangle_number(values in prop::collection::vec(0u8..5, 1..30)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let n = v.len() as f64;
        let sum: f64 = average_ranks(&v).iter().sum();
        prop_assert!((sum - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn auc_of_a_flat_curve_is_height_times_width(h in 0.0..=1.0f64, mut budgets in prop::collection::vec(1usize..1000, 1..10)) {
        budgets.push(0);
        budgets.sort_unstable();
        budgets.dedup();
        prop_assume!(budgets.len() >= 2);
        let pairs: Vec<(usize, f64)> = budgets.iter().map(|&b| (b, h)).collect();
        let area = auc(&AccuracyCurve::from_pairs(&pairs)).unwrap();
        prop_assert!((area - h * *budgets.last().unwrap() as f64).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn self_influence_is_never_positive(n in 6usize..30, d in 1usize..5, c in 0.01..20.0f64, seed: u64) {
        let data = gaussian_blobs(n, d, 1.5, seed);
        let cfg = cfg(c);
        let params = fit_logistic(&data, &cfg).unwrap();
        let factor = factor_for_fit(&params, &data, &cfg).unwrap();
        for z in data.examples() {
            prop_assert!(loo_influence(&params, &factor, z).unwrap() <= 0.0);
        }
    }

    #[test]
    fn influence_scores_ignore_example_order(n in 6usize..20, seed: u64) {
        let data = gaussian_blobs(n, 3, 1.5, seed);
        let cfg = cfg(1.0);
        let scores = |d: &Dataset| {
            let p = fit_logistic(d, &cfg).unwrap();
            let f = factor_for_fit(&p, d, &cfg).unwrap();
            score_all(&p, Some(&f), d, ScoreMetric::Influence, 0).unwrap().values().to_vec()
        };
        let forward = scores(&data);
        let reversed: Vec<LabeledExample> = data.examples().iter().rev().cloned().collect();
        let backward = scores(&Dataset::from_examples(reversed).unwrap());
        for (i, a) in forward.iter().enumerate() {
            let b = backward[n - 1 - i];
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-12), "{a} vs {b}");
        }
    }
}

#[test]
fn a_remaining_twin_cushions_the_removal() {
    let mut examples = gaussian_blobs(16, 2, 1.5, 77).examples().to_vec();
    let twin = examples[3].clone();
    examples.push(twin);
    let data = Dataset::from_examples(examples).unwrap();
    let delta = brute_force_loo(&data, &cfg(0.5), 3).unwrap();
    let single = brute_force_loo(&gaussian_blobs(16, 2, 1.5, 77), &cfg(0.5), 3).unwrap();
    assert!(
        delta >= 0.0 && delta < single,
        "twin {delta} vs alone {single}"
    );
}
