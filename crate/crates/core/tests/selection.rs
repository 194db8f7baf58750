use std::collections::BTreeSet;

use lrtd_core::datamodel::{init_pool, ClipId, PoolState};
use lrtd_core::selector::{lrtd_score, select_batch, ClipScore, Strategy};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ids(n: usize) -> Vec<ClipId> {
    (0..n).map(|i| ClipId::new(format!("v{}", i % 7), i)).collect()
}

fn scored(pool: &PoolState, f: impl Fn(&ClipId) -> f64) -> Vec<ClipScore> {
    pool.unlabeled()
        .iter()
        .map(|id| ClipScore {
            clip_id: id.clone(),
            score: f(id),
            strategy: Strategy::Lrtd,
        })
        .collect()
}

/// Full sort by (score, id) and take the first `n`.
fn brute_force(scores: &[ClipScore], n: usize) -> Vec<ClipId> {
    let mut all: Vec<&ClipScore> = scores.iter().collect();
    all.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.clip_id.cmp(&b.clip_id)));
    all.into_iter().take(n).map(|s| s.clip_id.clone()).collect()
}

#[test]
fn matches_brute_force_on_random_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.random_range(2..=1000);
        let pool = init_pool(&ids(n), 0.1, case).unwrap();
        // Few distinct values in half the cases to force ties.
        let levels = if case % 2 == 0 { 4 } else { 1_000_000 };
        let values: Vec<f64> = (0..pool.unlabeled().len())
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut scores: Vec<ClipScore> = pool
            .unlabeled()
            .iter()
            .zip(&values)
            .map(|(id, &v)| ClipScore {
                clip_id: id.clone(),
                score: v,
                strategy: Strategy::Lrtd,
            })
            .collect();
        scores.shuffle(&mut rng);
        let n_c = rng.random_range(0..=pool.unlabeled().len());
        let got = select_batch(&pool, &scores, n_c).unwrap();
        assert_eq!(got, brute_force(&scores, n_c), "case {case}");
        assert!(got.iter().all(|id| !pool.labeled().contains(id)));
    }
}

#[test]
fn all_equal_scores_take_smallest_ids() {
    let pool = PoolState::new(BTreeSet::new(), ids(5).into_iter().collect()).unwrap();
    let got = select_batch(&pool, &scored(&pool, |_| 0.5), 2).unwrap();
    let mut sorted = ids(5);
    sorted.sort();
    assert_eq!(got, sorted[..2].to_vec());
}

#[test]
fn contract_violations_are_errors() {
    let pool = init_pool(&ids(20), 0.25, 1).unwrap();
    let scores = scored(&pool, |id| id.end as f64);
    assert!(select_batch(&pool, &scores, pool.unlabeled().len() + 1).is_err());
    assert!(select_batch(&pool, &scores[1..], 1).is_err());
    let mut dup = scores.clone();
    dup.push(scores[0].clone());
    assert!(select_batch(&pool, &dup, 1).is_err());
    let mut nan = scores.clone();
    nan[0].score = f64::NAN;
    assert!(select_batch(&pool, &nan, 1).is_err());
    let mut labeled = scores;
    labeled[0].clip_id = pool.labeled().iter().next().unwrap().clone();
    assert!(select_batch(&pool, &labeled, 1).is_err());
}

#[test]
fn top_five_mean() {
    let entries: Vec<f64> = (1..=50).map(f64::from).collect();
    assert_eq!(lrtd_score(&entries, 5).unwrap(), 48.0);
    assert_eq!(lrtd_score(&[2.0, 4.0], 5).unwrap(), 3.0);
    assert!(lrtd_score(&[], 5).is_err());
    assert!(lrtd_score(&[1.0, f64::INFINITY], 5).is_err());
}

proptest! {
    #[test]
    fn increasing_transforms_keep_the_selection(
        values in prop::collection::vec(-50.0f64..50.0, 2..200),
        frac in 0.0f64..1.0,
        kind in 0usize..3,
    ) {
        let n = values.len();
        let pool = PoolState::new(BTreeSet::new(), ids(n).into_iter().collect()).unwrap();
        let order: Vec<ClipId> = pool.unlabeled().iter().cloned().collect();
        let lookup = |id: &ClipId| values[order.binary_search(id).unwrap()];
        let base = scored(&pool, lookup);
        let f = |v: f64| match kind {
            0 => v.exp(),
            1 => 3.0 * v - 7.0,
            _ => v.powi(3) + v,
        };
        let moved = scored(&pool, |id| f(lookup(id)));
        let n_c = ((n as f64) * frac) as usize;
        prop_assert_eq!(select_batch(&pool, &base, n_c).unwrap(), select_batch(&pool, &moved, n_c).unwrap());
    }

    #[test]
    fn score_lies_between_min_and_max(values in prop::collection::vec(0.0f64..1e6, 1..80), n_m in 1usize..10) {
        let s = lrtd_score(&values, n_m).unwrap();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
    }

    #[test]
    fn initial_pool_partitions_the_clips(n in 1usize..400, frac in 0.01f64..0.99, seed in 0u64..1000) {
        let all = ids(n);
        let pool = init_pool(&all, frac, seed).unwrap();
        prop_assert_eq!(pool.labeled().len(), (frac * n as f64).round() as usize);
        prop_assert!(pool.labeled().is_disjoint(pool.unlabeled()));
        prop_assert_eq!(pool.labeled().len() + pool.unlabeled().len(), n);
        prop_assert!(pool.check_partition(all.iter()).is_ok());
        prop_assert_eq!(init_pool(&all, frac, seed).unwrap(), pool);
    }
}
