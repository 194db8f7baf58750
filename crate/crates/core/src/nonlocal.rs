//! Temporal non-local block with embedded-Gaussian pairwise dependency.
//!
//! For a clip feature `x` (`H×T`) the block computes
//!
//! ```text
//! θ = Wθ x          φ̂ = maxpool(Wφ x)     ĝ = maxpool(Wg x)      (k = 2, s = 2)
//! L = θᵀ φ̂         (T × T', clamped to ±60)
//! y = ĝ · softmax_rows(L)ᵀ
//! z = Wz y + x
//! ```
//!
//! `exp(L)` is the raw dependency matrix used for clip scoring; its row
//! softmax is the normalized attention used in the forward pass.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{pooled_len, Tape, Tensor, Var};

/// Logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]` before exponentiation.
pub const LOGIT_CLAMP: f64 = 60.0;
pub const POOL_WINDOW: usize = 2;
pub const POOL_STRIDE: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixMode {
    /// `exp(θᵢᵀφ̂ⱼ)`.
    #[default]
    Raw,
    /// Row softmax of the raw matrix.
    Normalized,
}

/// Learnable weights of the block: three `E×H` embeddings and the `H×E`
/// output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct NonLocalParams {
    pub theta: Tensor,
    pub phi: Tensor,
    pub g: Tensor,
    pub z: Tensor,
}

impl NonLocalParams {
    pub fn new(theta: Tensor, phi: Tensor, g: Tensor, z: Tensor) -> Result<Self> {
        let (e, h) = (theta.rows(), theta.cols());
        for (name, t) in [("phi", &phi), ("g", &g)] {
            if t.shape() != theta.shape() {
                return Err(Error::shape(
                    if name == "phi" { "nonlocal.phi" } else { "nonlocal.g" },
                    theta.shape(),
                    t.shape(),
                ));
            }
        }
        if z.shape() != [h, e] {
            return Err(Error::shape("nonlocal.z", &[h, e], z.shape()));
        }
        Ok(NonLocalParams { theta, phi, g, z })
    }

    /// θ = φ = g = `[I | 0]` (first `embed` channels), zero output projection.
    pub fn identity(channels: usize, embed: usize) -> Result<Self> {
        if embed == 0 || embed > channels {
            return Err(Error::invalid(format!(
                "identity embedding needs 0 < embed <= channels, got {embed} > {channels}"
            )));
        }
        let eye = Tensor::from_fn(embed, channels, |r, c| if r == c { 1.0 } else { 0.0 });
        NonLocalParams::new(eye.clone(), eye.clone(), eye, Tensor::zeros(&[channels, embed]))
    }

    /// Uniform Xavier embeddings and a zero output projection.
    pub fn random<R: Rng + ?Sized>(channels: usize, embed: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (channels + embed) as f64).sqrt();
        let mut draw = || Tensor::from_fn(embed, channels, |_, _| rng.random_range(-bound..bound));
        let (theta, phi, g) = (draw(), draw(), draw());
        NonLocalParams {
            theta,
            phi,
            g,
            z: Tensor::zeros(&[channels, embed]),
        }
    }

    pub fn channels(&self) -> usize {
        self.theta.cols()
    }

    pub fn embed(&self) -> usize {
        self.theta.rows()
    }
}

/// Tape handles for the block weights.
#[derive(Clone, Copy, Debug)]
pub struct NonLocalVars {
    pub theta: Var,
    pub phi: Var,
    pub g: Var,
    pub z: Var,
}

impl NonLocalVars {
    pub fn bind(tape: &mut Tape, p: &NonLocalParams) -> Self {
        NonLocalVars {
            theta: tape.leaf(p.theta.clone()),
            phi: tape.leaf(p.phi.clone()),
            g: tape.leaf(p.g.clone()),
            z: tape.leaf(p.z.clone()),
        }
    }
}

/// Nodes produced by one pass of the block.
#[derive(Clone, Copy, Debug)]
pub struct NonLocalNodes {
    /// Unclamped `T×T'` logits.
    pub logits: Var,
    /// Clamped logits.
    pub clamped: Var,
    /// Row-normalized attention.
    pub attention: Var,
    /// Block output `z`, same shape as the input.
    pub output: Var,
}

fn check_input(x: &Tensor, channels: usize) -> Result<()> {
    if !x.is_matrix() || x.rows() != channels {
        return Err(Error::shape("nonlocal input", x.shape(), &[channels]));
    }
    if x.cols() < POOL_WINDOW {
        return Err(Error::invalid(format!(
            "non-local block needs at least {POOL_WINDOW} time steps, got {}",
            x.cols()
        )));
    }
    Ok(())
}

fn logits_on_tape(tape: &mut Tape, x: Var, w: &NonLocalVars) -> Result<(Var, Var, Var)> {
    let theta = tape.matmul(w.theta, x)?;
    let phi = tape.matmul(w.phi, x)?;
    let phi_hat = tape.maxpool_time(phi, POOL_WINDOW, POOL_STRIDE)?;
    let theta_t = tape.transpose(theta)?;
    let logits = tape.matmul(theta_t, phi_hat)?;
    let clamped = tape.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP)?;
    Ok((theta, logits, clamped))
}

/// Records the full block on `tape`.
pub fn nonlocal_on_tape(tape: &mut Tape, x: Var, w: &NonLocalVars) -> Result<NonLocalNodes> {
    let (_, logits, clamped) = logits_on_tape(tape, x, w)?;
    let attention = tape.softmax_rows(clamped)?;
    let g = tape.matmul(w.g, x)?;
    let g_hat = tape.maxpool_time(g, POOL_WINDOW, POOL_STRIDE)?;
    let attention_t = tape.transpose(attention)?;
    let y = tape.matmul(g_hat, attention_t)?;
    let wy = tape.matmul(w.z, y)?;
    let output = tape.add(wy, x)?;
    Ok(NonLocalNodes {
        logits,
        clamped,
        attention,
        output,
    })
}

/// Block output `z = Wz y + x` for one clip.
pub fn nonlocal_forward(x: &Tensor, params: &NonLocalParams) -> Result<Tensor> {
    check_input(x, params.channels())?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let w = NonLocalVars::bind(&mut tape, params);
    let nodes = nonlocal_on_tape(&mut tape, xv, &w)?;
    Ok(tape.value(nodes.output).clone())
}

/// `T×T'` pairwise frame dependency of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct DependencyMatrix {
    values: Tensor,
    mode: MatrixMode,
    clamped: usize,
}

impl DependencyMatrix {
    /// Wraps precomputed values; used for matrices built outside the block.
    pub fn from_values(values: Tensor, mode: MatrixMode) -> Self {
        DependencyMatrix {
            values,
            mode,
            clamped: 0,
        }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn entries(&self) -> &[f64] {
        self.values.data()
    }

    pub fn mode(&self) -> MatrixMode {
        self.mode
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// Number of logits that hit the ±60 clamp.
    pub fn clamp_events(&self) -> usize {
        self.clamped
    }
}

pub fn dependency_matrix(x: &Tensor, params: &NonLocalParams, mode: MatrixMode) -> Result<DependencyMatrix> {
    check_input(x, params.channels())?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let w = NonLocalVars::bind(&mut tape, params);
    let (_, logits, clamped) = logits_on_tape(&mut tape, xv, &w)?;
    let clamp_events = tape
        .value(logits)
        .data()
        .iter()
        .filter(|v| v.abs() > LOGIT_CLAMP)
        .count();
    let out = match mode {
        MatrixMode::Raw => tape.exp(clamped)?,
        MatrixMode::Normalized => tape.softmax_rows(clamped)?,
    };
    Ok(DependencyMatrix {
        values: tape.value(out).clone(),
        mode,
        clamped: clamp_events,
    })
}

/// Number of pairwise similarity evaluations for a clip of length `t`.
pub fn pair_count(t: usize, subsampled: bool) -> Result<usize> {
    if t < 2 {
        return Err(Error::invalid(format!("pair_count needs T >= 2, got {t}")));
    }
    Ok(if subsampled {
        t * pooled_len(t, POOL_WINDOW, POOL_STRIDE)
    } else {
        t * t
    })
}

/// Writes `clip_id` followed by the row-major matrix entries, one clip per line.
pub fn write_matrices_tsv<W: Write>(mut out: W, rows: &[(String, DependencyMatrix)]) -> std::io::Result<()> {
    if let Some((_, first)) = rows.first() {
        write!(out, "clip_id")?;
        for i in 0..first.rows() {
            for j in 0..first.cols() {
                write!(out, "\tm{i}_{j}")?;
            }
        }
        writeln!(out)?;
    }
    for (id, m) in rows {
        write!(out, "{id}")?;
        for v in m.entries() {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
