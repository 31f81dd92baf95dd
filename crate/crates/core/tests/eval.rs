use std::collections::HashSet;
use std::sync::Arc;

use cadc::dataset::{split_leave_last_two, Interaction, InteractionDataset};
use cadc::eval::{
    degradation, evaluate, format_with_degradation, hr_at_k, metrics_csv, ndcg_at_k, ndcg_gain, rank_of_target,
    EvalError, MetricsReport, METRICS_CSV_HEADER,
};
use proptest::prelude::*;

/// Sort every candidate by (score desc, index asc) and look the target up.
fn oracle_rank(scores: &[f64], target: u32, exclusions: &HashSet<u32>) -> usize {
    let mut order: Vec<u32> = (0..scores.len() as u32)
        .filter(|i| *i == target || !exclusions.contains(i))
        .collect();
    order.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
    order.iter().position(|&i| i == target).unwrap() + 1
}

fn arb_table() -> impl Strategy<Value = (Vec<f64>, u32, HashSet<u32>)> {
    (1usize..=20).prop_flat_map(|n| {
        (
            prop::collection::vec((-3i32..=3).prop_map(|v| v as f64 * 0.5), n),
            0..n as u32,
            prop::collection::hash_set(0..n as u32, 0..n),
        )
            .prop_map(|(scores, target, mut excl)| {
                excl.remove(&target);
                (scores, target, excl)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rank_matches_brute_force((scores, target, excl) in arb_table()) {
        let scorer = |_: u32, i: u32| scores[i as usize];
        let rank = rank_of_target(&scorer, 0, target, scores.len(), &excl).unwrap();
        prop_assert_eq!(rank, oracle_rank(&scores, target, &excl));
    }

    #[test]
    fn strictly_increasing_transforms_keep_ranks((scores, target, excl) in arb_table()) {
        let raw = |_: u32, i: u32| scores[i as usize];
        let squashed = |_: u32, i: u32| 1.0 / (1.0 + (-scores[i as usize]).exp());
        let affine = |_: u32, i: u32| 3.0 * scores[i as usize] + 7.0;
        let r = rank_of_target(&raw, 0, target, scores.len(), &excl).unwrap();
        prop_assert_eq!(r, rank_of_target(&squashed, 0, target, scores.len(), &excl).unwrap());
        prop_assert_eq!(r, rank_of_target(&affine, 0, target, scores.len(), &excl).unwrap());
    }
}

proptest! {
    #[test]
    fn ndcg_never_exceeds_hr(ranks in prop::collection::vec(1usize..40, 1..50), k in 1usize..20) {
        let hr = hr_at_k(&ranks, k).unwrap();
        let ndcg = ndcg_at_k(&ranks, k).unwrap();
        prop_assert!(ndcg <= hr + 1e-12);
        prop_assert!((0.0..=100.0).contains(&hr));
        prop_assert!((0.0..=100.0).contains(&ndcg));
    }

    #[test]
    fn metrics_ignore_rank_order(mut ranks in prop::collection::vec(1usize..40, 1..50), k in 1usize..20) {
        let hr = hr_at_k(&ranks, k).unwrap();
        let ndcg = ndcg_at_k(&ranks, k).unwrap();
        ranks.reverse();
        prop_assert_eq!(hr, hr_at_k(&ranks, k).unwrap());
        prop_assert!((ndcg - ndcg_at_k(&ranks, k).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn metric_examples() {
    assert_eq!(hr_at_k(&[1, 11], 10).unwrap(), 50.0);
    assert_eq!(hr_at_k(&[10], 10).unwrap(), 100.0);
    assert_eq!(ndcg_at_k(&[1], 10).unwrap(), 100.0);
    assert!((ndcg_at_k(&[2], 10).unwrap() - 100.0 / 3f64.log2()).abs() < 1e-9);
    assert_eq!(ndcg_gain(11, 10), 0.0);
    assert_eq!(hr_at_k(&[], 10), Err(EvalError::EmptyRanks));
    assert_eq!(ndcg_at_k(&[0], 10), Err(EvalError::ZeroRank));
}

#[test]
fn ties_go_to_the_lower_index() {
    let flat = |_: u32, _: u32| 0.5;
    let none = HashSet::new();
    assert_eq!(rank_of_target(&flat, 0, 0, 5, &none).unwrap(), 1);
    assert_eq!(rank_of_target(&flat, 0, 4, 5, &none).unwrap(), 5);
    let excl: HashSet<u32> = [1, 2].into();
    assert_eq!(rank_of_target(&flat, 0, 4, 5, &excl).unwrap(), 3);
    assert!(matches!(rank_of_target(&flat, 0, 1, 5, &excl), Err(EvalError::TargetExcluded { .. })));
    assert!(matches!(rank_of_target(&flat, 0, 9, 5, &none), Err(EvalError::ItemOutOfRange { .. })));
}

#[test]
fn evaluation_excludes_train_and_validation_items() {
    // user 0: train {0, 1}, validation 2, test 3; items 0..6
    let rows = vec![
        Interaction::positive(0, 0, 1),
        Interaction::positive(0, 1, 2),
        Interaction::positive(0, 2, 3),
        Interaction::positive(0, 3, 4),
    ];
    let ds = InteractionDataset::from_interactions(rows, 1, 6).unwrap();
    let split = split_leave_last_two(Arc::new(ds)).unwrap();
    // every seen item outranks the target, which is still rank 1 among the rest
    let scorer = |_: u32, i: u32| match i {
        0..=2 => 10.0,
        3 => 5.0,
        _ => 1.0,
    };
    let m = evaluate(&scorer, &split, 10).unwrap();
    assert_eq!(m.ranks, vec![1]);
    assert_eq!(m.hr, 100.0);
}

#[test]
fn reconsumed_test_item_is_still_ranked() {
    let rows = vec![
        Interaction::positive(0, 1, 1),
        Interaction::positive(0, 0, 2),
        Interaction::positive(0, 1, 3),
    ];
    let ds = InteractionDataset::from_interactions(rows, 1, 3).unwrap();
    let split = split_leave_last_two(Arc::new(ds)).unwrap();
    let scorer = |_: u32, i: u32| -(i as f64);
    let m = evaluate(&scorer, &split, 10).unwrap();
    // item 0 is excluded, so item 1 leads
    assert_eq!(m.ranks, vec![1]);
}

#[test]
fn report_formatting() {
    let r = MetricsReport {
        method: "cadc".into(),
        dataset: "ml-1m".into(),
        ratio: 0.1,
        seed: 0,
        hr_at_10: 6.5712,
        ndcg_at_10: 3.1,
        pretrain_seconds: 12.0,
        train_seconds: 3.25,
    };
    let csv = metrics_csv(std::slice::from_ref(&r));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_CSV_HEADER));
    assert_eq!(lines.next(), Some("cadc,ml-1m,0.1,0,6.5712,3.1000,12.000,3.250"));
    assert!((degradation(6.92, 6.57) - 5.0578).abs() < 1e-3);
    assert_eq!(format_with_degradation(6.57, 6.92), "6.57 (5.1%)");
    assert_eq!(format_with_degradation(6.92, 6.92), "6.92 (0.0%)");
}
