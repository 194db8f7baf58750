use lrtd_core::nonlocal::{dependency_matrix, nonlocal_forward, pair_count, MatrixMode, NonLocalParams, LOGIT_CLAMP};
use lrtd_core::numkernel::Tensor;
use lrtd_core::selector::lrtd_score;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Embedding of column `t` of `x`, then max over non-overlapping pairs.
fn embed(w: &Tensor, x: &Tensor, t: usize, e: usize) -> f64 {
    (0..x.rows()).map(|h| w.get(e, h) * x.get(h, t)).sum()
}

fn pooled(w: &Tensor, x: &Tensor, j: usize, e: usize) -> f64 {
    embed(w, x, 2 * j, e).max(embed(w, x, 2 * j + 1, e))
}

/// Direct evaluation: f(i, j) = exp(θ_iᵀ φ̂_j), normalized over j, weights ĝ_j.
fn oracle(x: &Tensor, p: &NonLocalParams) -> Tensor {
    let (h, t) = (x.rows(), x.cols());
    let e = p.theta.rows();
    let tp = t / 2;
    let mut y = vec![vec![0.0; e]; t];
    for (i, yi) in y.iter_mut().enumerate() {
        let logits: Vec<f64> = (0..tp)
            .map(|j| {
                let s: f64 = (0..e).map(|k| embed(&p.theta, x, i, k) * pooled(&p.phi, x, j, k)).sum();
                s.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
            })
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let c: f64 = w.iter().sum();
        for (j, wj) in w.iter().enumerate() {
            for (k, v) in yi.iter_mut().enumerate() {
                *v += wj / c * pooled(&p.g, x, j, k);
            }
        }
    }
    Tensor::from_fn(h, t, |r, i| {
        x.get(r, i) + (0..e).map(|k| p.z.get(r, k) * y[i][k]).sum::<f64>()
    })
}

#[test]
fn forward_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..20 {
        let h = rng.random_range(2..=8);
        let t = rng.random_range(2..=6);
        let e = rng.random_range(1..=h);
        let x = rand_matrix(&mut rng, h, t, 1.5);
        let p = NonLocalParams::new(
            rand_matrix(&mut rng, e, h, 1.0),
            rand_matrix(&mut rng, e, h, 1.0),
            rand_matrix(&mut rng, e, h, 1.0),
            rand_matrix(&mut rng, h, e, 1.0),
        )
        .unwrap();
        let got = nonlocal_forward(&x, &p).unwrap();
        let want = oracle(&x, &p);
        assert!(
            got.max_abs_diff(&want) < 1e-10,
            "case {case}: {}",
            got.max_abs_diff(&want)
        );
    }
}

#[test]
fn zero_output_projection_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let h = rng.random_range(2..=8);
        let t = rng.random_range(2..=12);
        let x = rand_matrix(&mut rng, h, t, 5.0);
        let p = NonLocalParams::random(h, rng.random_range(1..=h), &mut rng);
        assert_eq!(nonlocal_forward(&x, &p).unwrap(), x);
    }
}

#[test]
fn ten_frame_clip_gives_ten_by_five() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_matrix(&mut rng, 8, 10, 1.0);
    let p = NonLocalParams::random(8, 4, &mut rng);
    for mode in [MatrixMode::Raw, MatrixMode::Normalized] {
        let m = dependency_matrix(&x, &p, mode).unwrap();
        assert_eq!((m.rows(), m.cols()), (10, 5));
        assert_eq!(m.entries().len(), pair_count(10, true).unwrap());
    }
    assert_eq!(pair_count(10, false).unwrap(), 100);
}

#[test]
fn zero_features_score_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = NonLocalParams::random(8, 4, &mut rng);
    let m = dependency_matrix(&Tensor::zeros(&[8, 10]), &p, MatrixMode::Raw).unwrap();
    assert!(m.entries().iter().all(|&v| v == 1.0));
    assert_eq!(lrtd_score(m.entries(), 5).unwrap(), 1.0);
}

#[test]
fn extreme_logits_are_clamped_and_counted() {
    let x = Tensor::full(&[2, 4], 100.0);
    let p = NonLocalParams::identity(2, 2).unwrap();
    let m = dependency_matrix(&x, &p, MatrixMode::Raw).unwrap();
    assert_eq!(m.clamp_events(), 8);
    assert!(m.entries().iter().all(|&v| v == LOGIT_CLAMP.exp()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raw_positive_and_normalized_rows_sum_to_one(seed in 0u64..10_000, h in 2usize..8, t in 2usize..14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_matrix(&mut rng, h, t, 3.0);
        let p = NonLocalParams::random(h, (h / 2).max(1), &mut rng);
        let raw = dependency_matrix(&x, &p, MatrixMode::Raw).unwrap();
        prop_assert!(raw.entries().iter().all(|&v| v > 0.0 && v.is_finite()));
        let norm = dependency_matrix(&x, &p, MatrixMode::Normalized).unwrap();
        for r in 0..norm.rows() {
            let s: f64 = norm.values().row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
        // Normalization is the row softmax of the raw matrix.
        for r in 0..raw.rows() {
            let row = raw.values().row(r);
            let s: f64 = row.iter().sum();
            for (a, b) in row.iter().zip(norm.values().row(r)) {
                prop_assert!((a / s - b).abs() < 1e-9);
            }
        }
    }
}
