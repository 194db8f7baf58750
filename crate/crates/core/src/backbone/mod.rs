//! Recurrent clip encoder with an optional temporal non-local block and a
//! max-pool classifier head.
//!
//! Frames go through `tanh(W_in x + b)` and a single-layer LSTM; the hidden
//! sequence `H×T` either feeds the non-local block or bypasses it, and the
//! head max-pools over time before a linear layer to `P` logits.

mod checkpoint;
mod model;

use rand::Rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{
    is_nonlocal_param, EncoderConfig, ModelParams, ModelVars, HEAD_B, HEAD_W, INPUT_B, INPUT_W, LSTM_B, LSTM_WH,
    LSTM_WX, NL_G, NL_PHI, NL_THETA, NL_Z, PARAM_NAMES,
};

use crate::error::{Error, Result};
use crate::nonlocal::nonlocal_on_tape;
use crate::numkernel::{Tape, Tensor, Var};

/// LSTM hidden states of one clip, `H×T`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSequence(pub Tensor);

fn check_features(x: &Tensor, cfg: &EncoderConfig) -> Result<()> {
    if !x.is_matrix() || x.rows() != cfg.input_dim {
        return Err(Error::shape("clip features", x.shape(), &[cfg.input_dim]));
    }
    Ok(())
}

/// Input projection and LSTM over the `D×T` clip `x`; returns the `H×T` node.
pub fn encode_on_tape(tape: &mut Tape, x: Var, w: ModelVars<'_>, hidden: usize) -> Result<Var> {
    let v = w.vars;
    let steps = tape.value(x).cols();
    let proj = tape.matmul(v[INPUT_W], x)?;
    let proj = tape.add_col(proj, v[INPUT_B])?;
    let proj = tape.tanh(proj)?;
    let gx = tape.matmul(v[LSTM_WX], proj)?;
    let gx = tape.add_col(gx, v[LSTM_B])?;
    let mut h = tape.leaf(Tensor::zeros(&[hidden, 1]));
    let mut c = tape.leaf(Tensor::zeros(&[hidden, 1]));
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = tape.column(gx, t)?;
        let rec = tape.matmul(v[LSTM_WH], h)?;
        let gates = tape.add(xt, rec)?;
        let i = tape.row_slice(gates, 0, hidden)?;
        let i = tape.sigmoid(i)?;
        let f = tape.row_slice(gates, hidden, hidden)?;
        let f = tape.sigmoid(f)?;
        let g = tape.row_slice(gates, 2 * hidden, hidden)?;
        let g = tape.tanh(g)?;
        let o = tape.row_slice(gates, 3 * hidden, hidden)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        h = tape.mul(o, tc)?;
        outs.push(h);
    }
    tape.hstack(&outs)
}

/// Optional non-local block, then max over time and the linear head.
pub fn head_on_tape(tape: &mut Tape, hidden_seq: Var, w: ModelVars<'_>, use_nonlocal: bool) -> Result<Var> {
    let z = if use_nonlocal {
        nonlocal_on_tape(tape, hidden_seq, &w.nonlocal())?.output
    } else {
        hidden_seq
    };
    let steps = tape.value(z).cols();
    let pooled = tape.maxpool_time(z, steps, 1)?;
    let logits = tape.matmul(w.vars[HEAD_W], pooled)?;
    tape.add_col(logits, w.vars[HEAD_B])
}

/// Full forward pass; returns the `P×1` logits node.
pub fn forward_on_tape(
    tape: &mut Tape,
    x: Var,
    w: ModelVars<'_>,
    cfg: &EncoderConfig,
    use_nonlocal: bool,
) -> Result<Var> {
    let hs = encode_on_tape(tape, x, w, cfg.hidden_dim)?;
    head_on_tape(tape, hs, w, use_nonlocal)
}

pub fn encode(features: &Tensor, model: &ModelParams) -> Result<HiddenSequence> {
    check_features(features, model.config())?;
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let x = tape.leaf(features.clone());
    let hs = encode_on_tape(&mut tape, x, ModelVars { vars: &vars }, model.config().hidden_dim)?;
    Ok(HiddenSequence(tape.value(hs).clone()))
}

/// Logits from a hidden sequence, honoring the model's non-local flag.
pub fn classify(hidden: &HiddenSequence, model: &ModelParams) -> Result<Tensor> {
    let h = &hidden.0;
    if !h.is_matrix() || h.rows() != model.config().hidden_dim {
        return Err(Error::shape("classify", h.shape(), &[model.config().hidden_dim]));
    }
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let hv = tape.leaf(h.clone());
    let out = head_on_tape(&mut tape, hv, ModelVars { vars: &vars }, model.nonlocal_active())?;
    Ok(tape.value(out).clone())
}

pub fn logits(features: &Tensor, model: &ModelParams) -> Result<Tensor> {
    classify(&encode(features, model)?, model)
}

pub fn probabilities(logits: &Tensor) -> Vec<f64> {
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(features: &Tensor, model: &ModelParams) -> Result<usize> {
    Ok(argmax(logits(features, model)?.data()))
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    Tensor::from_fn(rows, cols, |_, _| if rng.random_bool(rate) { 0.0 } else { keep })
}

/// Entropy of the mean class distribution over `passes` dropout samples of
/// the hidden sequence. A zero rate collapses to one deterministic pass.
pub fn predictive_entropy<R: Rng + ?Sized>(
    features: &Tensor,
    model: &ModelParams,
    passes: usize,
    rate: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if passes == 0 {
        return Err(Error::invalid("predictive entropy needs at least one pass"));
    }
    check_features(features, model.config())?;
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let w = ModelVars { vars: &vars };
    let x = tape.leaf(features.clone());
    let hs = encode_on_tape(&mut tape, x, w, model.config().hidden_dim)?;
    let passes = if rate == 0.0 { 1 } else { passes };
    let p = model.config().num_phases;
    let mut mean = vec![0.0; p];
    for _ in 0..passes {
        let input = if rate == 0.0 {
            hs
        } else {
            let shape = tape.value(hs).shape().to_vec();
            let mask = tape.leaf(dropout_mask(shape[0], shape[1], rate, rng));
            tape.mul(hs, mask)?
        };
        let out = head_on_tape(&mut tape, input, w, model.nonlocal_active())?;
        for (m, q) in mean.iter_mut().zip(probabilities(tape.value(out))) {
            *m += q / passes as f64;
        }
    }
    Ok(entropy(&mean))
}

/// Cross-entropy loss of one clip and its gradient for every parameter.
pub fn loss_and_grads(
    model: &ModelParams,
    features: &Tensor,
    label: usize,
    use_nonlocal: bool,
) -> Result<(f64, Vec<Tensor>)> {
    check_features(features, model.config())?;
    if label >= model.config().num_phases {
        return Err(Error::invalid(format!(
            "label {label} outside 0..{}",
            model.config().num_phases
        )));
    }
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let x = tape.leaf(features.clone());
    let out = forward_on_tape(&mut tape, x, ModelVars { vars: &vars }, model.config(), use_nonlocal)?;
    let loss = tape.softmax_cross_entropy(out, label)?;
    let grads = model.params().collect_grads(&tape, loss, &vars)?;
    Ok((tape.scalar(loss), grads))
}
