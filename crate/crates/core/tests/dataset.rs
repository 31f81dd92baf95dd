use std::collections::{HashMap, HashSet};
use std::io::Cursor;
use std::sync::Arc;

use cadc::dataset::{
    item_frequency, oversample_tail, parse_interactions_from, parse_side_features_from, sample_negatives,
    sample_uniform, split_leave_last_two, undersample_head, DatasetError, FeatureSchema, Interaction,
    InteractionDataset, InteractionFormat, OVERSAMPLE_CAP,
};
use proptest::prelude::*;

fn dataset(rows: &[(u32, u32, i64)], n_users: usize, n_items: usize) -> InteractionDataset {
    let rows = rows.iter().map(|&(u, i, t)| Interaction::positive(u, i, t)).collect();
    InteractionDataset::from_interactions(rows, n_users, n_items).unwrap()
}

fn rows_for_items(freqs: &[usize]) -> Vec<Interaction> {
    let mut out = Vec::new();
    let mut t = 0;
    for (item, &f) in freqs.iter().enumerate() {
        for u in 0..f {
            out.push(Interaction::positive(u as u32, item as u32, t));
            t += 1;
        }
    }
    out
}

fn count_by_item(rows: &[Interaction]) -> HashMap<u32, usize> {
    let mut m = HashMap::new();
    for r in rows {
        *m.entry(r.item).or_default() += 1;
    }
    m
}

fn multiset(rows: &[Interaction]) -> HashMap<Interaction, usize> {
    let mut m = HashMap::new();
    for r in rows {
        *m.entry(*r).or_default() += 1;
    }
    m
}

fn is_sub_multiset(small: &[Interaction], big: &[Interaction]) -> bool {
    let big = multiset(big);
    multiset(small).iter().all(|(k, n)| big.get(k).copied().unwrap_or(0) >= *n)
}

#[test]
fn movielens_line_becomes_positive_interaction() {
    let ds = parse_interactions_from(Cursor::new("1::1193::5::978300760\n"), InteractionFormat::MovielensDat).unwrap();
    assert_eq!(ds.interactions(), &[Interaction::positive(0, 0, 978300760)]);
    assert_eq!(ds.user_ids().raw(0), Some("1"));
    assert_eq!(ds.item_ids().raw(0), Some("1193"));
    assert_eq!(ds.interactions()[0].label, 1);
}

#[test]
fn empty_file_is_no_interactions() {
    let e = parse_interactions_from(Cursor::new(""), InteractionFormat::Tsv).unwrap_err();
    assert!(matches!(e, DatasetError::Empty));
    assert_eq!(e.to_string(), "no interactions");
}

#[test]
fn dense_ids_follow_first_occurrence() {
    let ds = parse_interactions_from(Cursor::new("7\t1\t5\n3\t1\t6\n7\t2\t7\n"), InteractionFormat::Tsv).unwrap();
    assert_eq!(ds.user_ids().dense("7"), Some(0));
    assert_eq!(ds.user_ids().dense("3"), Some(1));
    assert_eq!(ds.n_users(), 2);
    assert_eq!(ds.n_items(), 2);
}

#[test]
fn tsv_comments_and_malformed_lines() {
    let ds = parse_interactions_from(Cursor::new("# header\n1\t2\t3\n"), InteractionFormat::Tsv).unwrap();
    assert_eq!(ds.interactions().len(), 1);
    let e = parse_interactions_from(Cursor::new("1\t2\t3\n1\t2\n"), InteractionFormat::Tsv).unwrap_err();
    assert!(matches!(e, DatasetError::Malformed { line: 2, .. }), "{e}");
}

#[test]
fn duplicate_rows_are_kept() {
    let ds = parse_interactions_from(Cursor::new("1\t2\t3\n1\t2\t3\n"), InteractionFormat::Tsv).unwrap();
    assert_eq!(ds.interactions().len(), 2);
}

#[test]
fn movielens_side_features() {
    let ds = parse_interactions_from(Cursor::new("1::10::5::1\n2::20::5::2\n"), InteractionFormat::MovielensDat).unwrap();
    let users = "1::F::1::10::48067\n2::M::56::20::55455\n";
    let movies = "10::Toy Story (1995)::Animation|Comedy\n20::Heat (1995)::Action|Crime|Thriller\n";
    let ds = parse_side_features_from(ds, Some(Cursor::new(users)), Some(Cursor::new(movies)), FeatureSchema::Movielens)
        .unwrap();
    assert_eq!(ds.user_features().dim(), 30);
    assert_eq!(ds.item_features().dim(), 18);
    let u = ds.user_features().row(0);
    assert_eq!(&u[..2], &[1.0, 0.0]);
    assert_eq!(u[2], 1.0, "age code 1 is the first bucket");
    assert_eq!(u[9 + 10], 1.0, "occupation 10");
    assert_eq!(u.iter().sum::<f32>(), 3.0);
    let u2 = ds.user_features().row(1);
    assert_eq!(&u2[..2], &[0.0, 1.0]);
    assert_eq!(u2[8], 1.0, "age code 56 is the last bucket");
    assert_eq!(ds.item_features().row(0).iter().sum::<f32>(), 2.0);
    assert_eq!(ds.item_features().row(1).iter().sum::<f32>(), 3.0);
}

#[test]
fn feature_rows_for_unknown_ids_are_skipped_and_missing_rows_are_zero() {
    let ds = parse_interactions_from(Cursor::new("1::10::5::1\n2::10::5::2\n"), InteractionFormat::MovielensDat).unwrap();
    let users = "1::M::25::3::1\n99::F::18::2::1\n";
    let ds = parse_side_features_from(ds, Some(Cursor::new(users)), None::<Cursor<&str>>, FeatureSchema::Movielens)
        .unwrap();
    assert_eq!(ds.user_features().row(0).iter().sum::<f32>(), 3.0);
    assert!(ds.user_features().row(1).iter().all(|v| *v == 0.0));
    assert!(ds.item_features().row(0).iter().all(|v| *v == 0.0));
}

#[test]
fn schema_none_has_no_features() {
    let ds = parse_interactions_from(Cursor::new("1\t2\t3\n"), InteractionFormat::Tsv).unwrap();
    let ds = parse_side_features_from(ds, None::<Cursor<&str>>, None::<Cursor<&str>>, FeatureSchema::None).unwrap();
    assert_eq!(ds.user_features().dim(), 0);
    assert_eq!(ds.item_features().dim(), 0);
}

#[test]
fn split_examples() {
    let s = split_leave_last_two(Arc::new(dataset(
        &[(0, 0, 10), (0, 1, 20), (0, 2, 30), (0, 3, 40), (0, 4, 50), (1, 0, 1), (1, 1, 2)],
        2,
        5,
    )))
    .unwrap();
    let ts = |v: &[Interaction]| v.iter().map(|i| i.timestamp).collect::<Vec<_>>();
    assert_eq!(ts(&s.train), vec![10, 20, 30]);
    assert_eq!(ts(&s.validation), vec![40]);
    assert_eq!(ts(&s.test), vec![50]);
    assert!(s.train.iter().chain(&s.validation).chain(&s.test).all(|i| i.user == 0));

    let rows: Vec<(u32, u32, i64)> = (0..4).flat_map(|u| (0..3).map(move |t| (u, t, t as i64))).collect();
    let s = split_leave_last_two(Arc::new(dataset(&rows, 4, 3))).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (4, 4, 4));

    let e = split_leave_last_two(Arc::new(dataset(&[(0, 0, 1), (0, 1, 2)], 1, 2))).unwrap_err();
    assert!(matches!(e, DatasetError::EmptySplit));
}

#[test]
fn uniform_sample_examples() {
    let train: Vec<Interaction> = (0..1_000_209u32).map(|i| Interaction::positive(i % 7, i % 11, i as i64)).collect();
    assert_eq!(sample_uniform(&train, 0.1, 3).unwrap().len(), 100_020);
    assert_eq!(sample_uniform(&train, 1.0, 3).unwrap(), train);
    let small = &train[..100];
    assert_eq!(sample_uniform(small, 0.3, 9).unwrap(), sample_uniform(small, 0.3, 9).unwrap());
    for bad in [0.0, -0.5, 1.5, f64::NAN] {
        assert!(matches!(sample_uniform(small, bad, 0), Err(DatasetError::InvalidRatio(_))));
    }
}

#[test]
fn inclusion_frequency_is_near_half_over_200_seeds() {
    let train: Vec<Interaction> = (0..60u32).map(|i| Interaction::positive(i, i, i as i64)).collect();
    let mut hits = vec![0usize; train.len()];
    for seed in 0..200 {
        for it in sample_uniform(&train, 0.5, seed).unwrap() {
            hits[it.user as usize] += 1;
        }
    }
    for (i, &h) in hits.iter().enumerate() {
        let f = h as f64 / 200.0;
        assert!((f - 0.5).abs() <= 0.15, "row {i}: inclusion {f}");
    }
}

#[test]
fn negative_sampling_examples() {
    let ds = dataset(&[(0, 0, 1), (1, 0, 1), (1, 2, 2)], 2, 3);
    let pos = ds.interactions().to_vec();
    let neg = sample_negatives(&pos, &ds, 1, 5).unwrap();
    assert_eq!(neg.len(), pos.len());
    assert_eq!(neg.seed, 5);

    let forced = dataset(&[(0, 0, 1), (0, 0, 2)], 1, 2);
    let neg = sample_negatives(forced.interactions(), &forced, 3, 1).unwrap();
    assert!(neg.pairs.iter().all(|&(u, i)| u == 0 && i == 1));
    assert_eq!(neg.len(), 6);
}

#[test]
fn saturated_users_are_skipped() {
    let ds = dataset(&[(0, 0, 1), (0, 1, 2), (1, 0, 3)], 2, 2);
    let neg = sample_negatives(ds.interactions(), &ds, 1, 0).unwrap();
    assert_eq!(neg.pairs, vec![(1, 1)]);
}

#[test]
fn oversampling_examples() {
    let equal = rows_for_items(&[3, 3, 3]);
    assert_eq!(oversample_tail(&equal, 1).unwrap(), equal);

    let out = oversample_tail(&rows_for_items(&[1, 5, 5]), 1).unwrap();
    assert_eq!(count_by_item(&out), HashMap::from([(0, 5), (1, 5), (2, 5)]));

    let out = oversample_tail(&rows_for_items(&[1, 100, 100]), 1).unwrap();
    assert_eq!(count_by_item(&out)[&0], OVERSAMPLE_CAP);
    assert!(oversample_tail(&[], 1).is_err());
}

#[test]
fn undersampling_examples() {
    let equal = rows_for_items(&[4, 4]);
    assert_eq!(undersample_head(&equal, 1).unwrap(), equal);
    let input = rows_for_items(&[1, 5, 9]);
    let out = undersample_head(&input, 1).unwrap();
    assert_eq!(count_by_item(&out), HashMap::from([(0, 1), (1, 5), (2, 5)]));
    assert!(is_sub_multiset(&out, &input));
}

#[test]
fn item_frequency_examples() {
    let rows = rows_for_items(&[2, 2]);
    assert_eq!(item_frequency(&rows, 2), vec![0.5, 0.5]);
    let single = item_frequency(&rows_for_items(&[50]), 1);
    assert_eq!(single, vec![1.0]);
}

fn arb_log() -> impl Strategy<Value = (Vec<(u32, u32, i64)>, usize, usize)> {
    (1usize..8, 1usize..10).prop_flat_map(|(nu, ni)| {
        let row = (0..nu as u32, 0..ni as u32, 0i64..20);
        (prop::collection::vec(row, 1..80), Just(nu), Just(ni))
    })
}

proptest! {
    #[test]
    fn split_is_disjoint_and_complete((rows, nu, ni) in arb_log()) {
        let ds = Arc::new(dataset(&rows, nu, ni));
        let Ok(s) = split_leave_last_two(Arc::clone(&ds)) else {
            return Ok(());
        };
        let mut counts = vec![0usize; nu];
        for r in &rows {
            counts[r.0 as usize] += 1;
        }
        let eligible: HashSet<u32> = (0..nu as u32).filter(|&u| counts[u as usize] >= 3).collect();
        let test_users: Vec<u32> = s.test.iter().map(|i| i.user).collect();
        prop_assert_eq!(test_users.len(), eligible.len());
        prop_assert_eq!(test_users.iter().copied().collect::<HashSet<_>>(), eligible.clone());
        prop_assert_eq!(s.validation.len(), eligible.len());
        let total = s.train.len() + s.validation.len() + s.test.len();
        let expected: usize = eligible.iter().map(|&u| counts[u as usize]).sum();
        prop_assert_eq!(total, expected);
        // the held-out rows are the latest ones per user
        for t in &s.test {
            let latest = s.train.iter().chain(&s.validation).filter(|i| i.user == t.user).map(|i| i.timestamp).max();
            prop_assert!(latest.is_none_or(|l| l <= t.timestamp));
        }
        let all: Vec<Interaction> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        prop_assert!(is_sub_multiset(&all, ds.interactions()));
    }

    #[test]
    fn uniform_sample_size_and_order(n in 0usize..300, ratio in 0.001f64..=1.0, seed: u64) {
        let train: Vec<Interaction> = (0..n as u32).map(|i| Interaction::positive(i, 0, i as i64)).collect();
        let out = sample_uniform(&train, ratio, seed).unwrap();
        prop_assert_eq!(out.len(), ((ratio * n as f64) + 1e-9).floor() as usize);
        prop_assert!(out.windows(2).all(|w| w[0].user < w[1].user));
        prop_assert_eq!(sample_uniform(&train, 1.0, seed).unwrap(), train);
    }

    #[test]
    fn negatives_never_hit_positives((rows, nu, ni) in arb_log(), k in 1usize..4, seed: u64) {
        let ds = dataset(&rows, nu, ni);
        let positives: HashSet<(u32, u32)> = rows.iter().map(|r| (r.0, r.1)).collect();
        let neg = sample_negatives(ds.interactions(), &ds, k, seed).unwrap();
        prop_assert!(neg.pairs.iter().all(|p| !positives.contains(p)));
        prop_assert!(neg.len() <= k * rows.len());
    }

    #[test]
    fn transforms_bound_the_input(freqs in prop::collection::vec(1usize..30, 1..8), seed: u64) {
        let input = rows_for_items(&freqs);
        let over = oversample_tail(&input, seed).unwrap();
        prop_assert!(is_sub_multiset(&input, &over));
        let under = undersample_head(&input, seed).unwrap();
        prop_assert!(is_sub_multiset(&under, &input));
        let mut sorted = freqs.clone();
        sorted.sort_unstable();
        let median = sorted[(sorted.len() - 1) / 2];
        for (item, &c) in &count_by_item(&under) {
            prop_assert_eq!(c, freqs[*item as usize].min(median));
        }
        for (item, &c) in &count_by_item(&over) {
            let f = freqs[*item as usize];
            prop_assert_eq!(c, if f < median { median.min(OVERSAMPLE_CAP * f) } else { f });
        }
    }

    #[test]
    fn item_frequency_is_a_positive_distribution(freqs in prop::collection::vec(0usize..20, 1..12)) {
        let rows = rows_for_items(&freqs);
        let q = item_frequency(&rows, freqs.len());
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(q.iter().all(|&p| p > 0.0));
    }
}
