use lrtd_core::backbone::{encode, EncoderConfig, ModelParams};
use lrtd_core::datamodel::{generate, make_clips, SyntheticSpec};
use lrtd_core::nonlocal::{dependency_matrix, MatrixMode, NonLocalParams};
use lrtd_core::selector::lrtd_score;
use statrs::distribution::{ContinuousCDF, Normal};

/// One-sided Mann-Whitney p-value that `a` tends to lie below `b`, normal
/// approximation with tie correction and continuity correction.
fn rank_sum_less(a: &[f64], b: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len() as f64;
    let (mut r1, mut ties, mut i) = (0.0, 0.0, 0);
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        r1 += rank * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let sd = (n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))).sqrt();
    Normal::new(0.0, 1.0).unwrap().cdf((u - n1 * n2 / 2.0 + 0.5) / sd)
}

#[test]
fn rank_sum_sanity() {
    let low: Vec<f64> = (0..30).map(f64::from).collect();
    let high: Vec<f64> = (20..50).map(f64::from).collect();
    assert!(rank_sum_less(&low, &high) < 1e-6);
    assert!(rank_sum_less(&high, &low) > 0.999);
    let p = rank_sum_less(&low, &low);
    assert!((p - 0.5).abs() < 0.05);
}

#[test]
fn outlier_clips_score_lower() {
    let ds = generate(&SyntheticSpec {
        num_videos: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let enc = EncoderConfig::default();
    let model = ModelParams::init(&enc, 0).unwrap();
    let identity = NonLocalParams::identity(enc.hidden_dim, enc.embed()).unwrap();
    let (mut outlier, mut clean) = (Vec::new(), Vec::new());
    for (v, video) in ds.videos.iter().enumerate() {
        for clip in make_clips(video, v, enc.clip_len).unwrap() {
            let hs = encode(&clip.features(&ds), &model).unwrap();
            let m = dependency_matrix(&hs.0, &identity, MatrixMode::Raw).unwrap();
            let s = lrtd_score(m.entries(), 5).unwrap();
            if clip.has_outlier(&ds) {
                outlier.push(s);
            } else if !clip.spans_transition(&ds) {
                clean.push(s);
            }
        }
    }
    assert!(outlier.len() + clean.len() >= 200 && outlier.len() >= 30);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&outlier) < mean(&clean));
    let p = rank_sum_less(&outlier, &clean);
    assert!(p < 0.01, "rank-sum p = {p}");
}
