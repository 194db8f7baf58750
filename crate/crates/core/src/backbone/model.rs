use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlocal::{NonLocalParams, NonLocalVars};
use crate::numkernel::{Param, ParamSet, Tensor, Var};
use crate::seed::{rng_for, STREAM_PARAM_INIT};

/// Shape of the clip encoder, the non-local block and the classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Per-frame feature dimension `D`.
    pub input_dim: usize,
    /// LSTM hidden width `H`.
    pub hidden_dim: usize,
    /// Clip length `T`.
    pub clip_len: usize,
    /// Number of phases `P`.
    pub num_phases: usize,
    /// Dropout on the hidden sequence for MC-dropout entropy.
    pub dropout: f64,
    /// Width of the θ/φ/g embeddings; `H/2` when absent.
    pub embed_dim: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 16,
            hidden_dim: 32,
            clip_len: 10,
            num_phases: 7,
            dropout: 0.1,
            embed_dim: None,
        }
    }
}

impl EncoderConfig {
    pub fn embed(&self) -> usize {
        self.embed_dim.unwrap_or(self.hidden_dim / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Error::invalid(format!("encoder field `{name}`: {msg}"));
        if self.input_dim == 0 {
            return Err(field("input_dim", "must be positive"));
        }
        if self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(2) {
            return Err(field("hidden_dim", "must be positive and even"));
        }
        if self.clip_len < 2 {
            return Err(field("clip_len", "must be at least 2"));
        }
        if self.num_phases == 0 {
            return Err(field("num_phases", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(field("dropout", "must lie in [0, 1)"));
        }
        if self.embed_dim == Some(0) {
            return Err(field("embed_dim", "must be positive"));
        }
        Ok(())
    }
}

// Parameter order within the set; also the checkpoint payload order.
pub const INPUT_W: usize = 0;
pub const INPUT_B: usize = 1;
pub const LSTM_WX: usize = 2;
pub const LSTM_WH: usize = 3;
pub const LSTM_B: usize = 4;
pub const NL_THETA: usize = 5;
pub const NL_PHI: usize = 6;
pub const NL_G: usize = 7;
pub const NL_Z: usize = 8;
pub const HEAD_W: usize = 9;
pub const HEAD_B: usize = 10;

pub const PARAM_NAMES: [&str; 11] = [
    "input.weight",
    "input.bias",
    "lstm.w_ih",
    "lstm.w_hh",
    "lstm.bias",
    "nonlocal.theta",
    "nonlocal.phi",
    "nonlocal.g",
    "nonlocal.z",
    "head.weight",
    "head.bias",
];

pub fn is_nonlocal_param(idx: usize) -> bool {
    (NL_THETA..=NL_Z).contains(&idx)
}

fn param_shapes(cfg: &EncoderConfig) -> [[usize; 2]; 11] {
    let (d, h, p, e) = (cfg.input_dim, cfg.hidden_dim, cfg.num_phases, cfg.embed());
    [
        [h, d],
        [h, 1],
        [4 * h, h],
        [4 * h, h],
        [4 * h, 1],
        [e, h],
        [e, h],
        [e, h],
        [h, e],
        [p, h],
        [p, 1],
    ]
}

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// All learnable weights of the recurrent encoder, the non-local block and
/// the classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: EncoderConfig,
    params: ParamSet,
    nonlocal_active: bool,
}

impl ModelParams {
    /// Seeded initialization with the non-local block detached.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[STREAM_PARAM_INIT]);
        let shapes = param_shapes(config);
        let h = config.hidden_dim;
        let mut set = ParamSet::new();
        for (i, [r, c]) in shapes.into_iter().enumerate() {
            let value = match i {
                INPUT_B | HEAD_B | NL_Z => Tensor::zeros(&[r, c]),
                // Forget-gate bias starts at 1.
                LSTM_B => Tensor::from_fn(r, c, |row, _| if (h..2 * h).contains(&row) { 1.0 } else { 0.0 }),
                _ => xavier(r, c, &mut rng),
            };
            set.push(Param::new(PARAM_NAMES[i], value))?;
        }
        Ok(ModelParams {
            config: config.clone(),
            params: set,
            nonlocal_active: false,
        })
    }

    /// Every weight zero.
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut set = ParamSet::new();
        for (i, [r, c]) in param_shapes(config).into_iter().enumerate() {
            set.push(Param::new(PARAM_NAMES[i], Tensor::zeros(&[r, c])))?;
        }
        Ok(ModelParams {
            config: config.clone(),
            params: set,
            nonlocal_active: false,
        })
    }

    pub(crate) fn from_parts(config: EncoderConfig, params: ParamSet, nonlocal_active: bool) -> Result<Self> {
        config.validate()?;
        let shapes = param_shapes(&config);
        if params.len() != shapes.len() {
            return Err(Error::invalid(format!(
                "model needs {} parameters, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.id() != PARAM_NAMES[i] {
                return Err(Error::invalid(format!(
                    "parameter {i} is `{}`, expected `{}`",
                    p.id(),
                    PARAM_NAMES[i]
                )));
            }
            if p.value().shape() != shapes[i] {
                return Err(Error::shape(PARAM_NAMES[i], &shapes[i], p.value().shape()));
            }
        }
        Ok(ModelParams {
            config,
            params,
            nonlocal_active,
        })
    }

    /// Fresh random θ/φ/g and a zero output projection; marks the block active.
    pub fn attach_nonlocal(&mut self, seed: u64) {
        let mut rng = rng_for(seed, &[STREAM_PARAM_INIT, 1]);
        let nl = NonLocalParams::random(self.config.hidden_dim, self.config.embed(), &mut rng);
        self.set_nonlocal_params(nl).expect("shapes follow the config");
        self.nonlocal_active = true;
    }

    pub fn set_nonlocal_params(&mut self, nl: NonLocalParams) -> Result<()> {
        self.params.get_mut(NL_THETA).set_value(nl.theta)?;
        self.params.get_mut(NL_PHI).set_value(nl.phi)?;
        self.params.get_mut(NL_G).set_value(nl.g)?;
        self.params.get_mut(NL_Z).set_value(nl.z)?;
        Ok(())
    }

    pub fn set_nonlocal_active(&mut self, active: bool) {
        self.nonlocal_active = active;
    }

    pub fn nonlocal_active(&self) -> bool {
        self.nonlocal_active
    }

    pub fn nonlocal_params(&self) -> NonLocalParams {
        NonLocalParams {
            theta: self.params.get(NL_THETA).value().clone(),
            phi: self.params.get(NL_PHI).value().clone(),
            g: self.params.get(NL_G).value().clone(),
            z: self.params.get(NL_Z).value().clone(),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

/// Tape handles for a bound [`ParamSet`] laid out as in [`PARAM_NAMES`].
#[derive(Clone, Copy, Debug)]
pub struct ModelVars<'a> {
    pub vars: &'a [Var],
}

impl ModelVars<'_> {
    pub fn nonlocal(&self) -> NonLocalVars {
        NonLocalVars {
            theta: self.vars[NL_THETA],
            phi: self.vars[NL_PHI],
            g: self.vars[NL_G],
            z: self.vars[NL_Z],
        }
    }
}
