use lrtd_core::backbone::{forward_on_tape, EncoderConfig, ModelParams, ModelVars};
use lrtd_core::nonlocal::NonLocalParams;
use lrtd_core::numkernel::{grad_check, Param, ParamSet, Tape, Tensor, Var, DEFAULT_STEP};
use lrtd_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn params_of(tensors: Vec<Tensor>) -> ParamSet {
    let mut set = ParamSet::new();
    for (i, t) in tensors.into_iter().enumerate() {
        set.push(Param::new(format!("p{i}"), t)).unwrap();
    }
    set
}

/// Reduces a node to a scalar through fixed random weights so every output
/// entry carries a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.leaf(rand_matrix(&mut rng, shape[0], shape[1]));
    let prod = tape.mul(v, w)?;
    tape.sum(prod)
}

fn check(name: &str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let set = params_of(inputs);
    let err = grad_check(&set, DEFAULT_STEP, |tape, v| {
        let out = f(tape, v)?;
        weighted_sum(tape, out, 99)
    })
    .unwrap();
    assert!(err < TOL, "{name}: relative error {err:e}");
}

#[test]
fn every_primitive_matches_central_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r, c| rand_matrix(&mut rng, r, c);
        let (a34, b45, c34, col3) = (m(3, 4), m(4, 5), m(3, 4), m(3, 1));
        let (sq, wide, tall) = (m(3, 4), m(2, 6), m(6, 3));
        let logits = m(5, 1);

        check("matmul", vec![a34.clone(), b45], |t, v| t.matmul(v[0], v[1]));
        check("add", vec![a34.clone(), c34.clone()], |t, v| t.add(v[0], v[1]));
        check("add_col", vec![a34.clone(), col3], |t, v| t.add_col(v[0], v[1]));
        check("mul", vec![a34.clone(), c34], |t, v| t.mul(v[0], v[1]));
        check("scale", vec![a34.clone()], |t, v| t.scale(v[0], -2.5));
        check("tanh", vec![a34.clone()], |t, v| t.tanh(v[0]));
        check("sigmoid", vec![a34.clone()], |t, v| t.sigmoid(v[0]));
        check("exp", vec![a34.clone()], |t, v| t.exp(v[0]));
        check(
            "clamp",
            vec![Tensor::from_fn(3, 4, |r, c| 3.0 * a34.get(r, c))],
            |t, v| t.clamp(v[0], -1.3, 1.7),
        );
        check("transpose", vec![a34.clone()], |t, v| t.transpose(v[0]));
        check("column", vec![a34.clone()], |t, v| t.column(v[0], 2));
        check("hstack", vec![col_of(&a34, 0), sq.clone()], |t, v| {
            t.hstack(&[v[0], v[1], v[0]])
        });
        check("row_slice", vec![tall.clone()], |t, v| t.row_slice(v[0], 2, 3));
        check("maxpool_time", vec![wide.clone()], |t, v| t.maxpool_time(v[0], 2, 2));
        check("maxpool_time odd", vec![m(3, 5)], |t, v| t.maxpool_time(v[0], 2, 2));
        check("softmax_rows", vec![sq.clone()], |t, v| t.softmax_rows(v[0]));
        check("sum", vec![wide], |t, v| t.sum(v[0]));
        for target in 0..5 {
            let set = params_of(vec![logits.clone()]);
            let err = grad_check(&set, DEFAULT_STEP, |t, v| t.softmax_cross_entropy(v[0], target)).unwrap();
            assert!(err < TOL, "softmax_cross_entropy: {err:e}");
        }
    }
}

fn col_of(t: &Tensor, j: usize) -> Tensor {
    Tensor::matrix(t.rows(), 1, t.column(j)).unwrap()
}

fn small_model(seed: u64) -> ModelParams {
    let cfg = EncoderConfig {
        input_dim: 3,
        hidden_dim: 4,
        clip_len: 4,
        num_phases: 3,
        ..EncoderConfig::default()
    };
    let mut model = ModelParams::init(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let e = cfg.embed();
    // A nonzero output projection so the block contributes to the loss.
    let nl = NonLocalParams::random(4, e, &mut rng);
    let z = rand_matrix(&mut rng, 4, e);
    model
        .set_nonlocal_params(NonLocalParams::new(nl.theta, nl.phi, nl.g, z).unwrap())
        .unwrap();
    model.set_nonlocal_active(true);
    model
}

#[test]
fn end_to_end_loss_gradient_over_ten_seeds() {
    for seed in 0..10 {
        let model = small_model(seed);
        let cfg = model.config().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let x = rand_matrix(&mut rng, 3, 4);
        let label = (seed % 3) as usize;
        let err = grad_check(model.params(), DEFAULT_STEP, |tape, vars| {
            let xv = tape.leaf(x.clone());
            let logits = forward_on_tape(tape, xv, ModelVars { vars }, &cfg, true)?;
            tape.softmax_cross_entropy(logits, label)
        })
        .unwrap();
        assert!(err < TOL, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn grad_check_rejects_a_bad_step() {
    let set = params_of(vec![Tensor::matrix(1, 1, vec![0.3]).unwrap()]);
    let ok = grad_check(&set, DEFAULT_STEP, |t, v| {
        let e = t.exp(v[0])?;
        t.sum(e)
    })
    .unwrap();
    assert!(ok < 1e-8);
    assert!(grad_check(&set, -1.0, |t, v| t.sum(v[0])).is_err());
    assert!(grad_check(&set, f64::NAN, |t, v| t.sum(v[0])).is_err());
}
