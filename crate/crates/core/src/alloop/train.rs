//! Two-stage training: the recurrent encoder and head first with the
//! non-local block bypassed, then the whole network with the block attached
//! (output projection starting at zero).

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{argmax, is_nonlocal_param, logits, loss_and_grads, EncoderConfig, ModelParams};
use crate::datamodel::{Clip, Dataset};
use crate::error::{Error, Result};
use crate::numkernel::{make_optimizer, OptimizerKind, Tensor};
use crate::seed::{rng_for, STREAM_SHUFFLE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_optimizer: OptimizerKind,
    pub finetune_epochs: usize,
    /// Encoder and head rate during the second stage.
    pub finetune_lr: f64,
    /// Non-local block rate during the second stage.
    pub nonlocal_lr: f64,
    pub finetune_optimizer: OptimizerKind,
    pub lr_decay_factor: f64,
    pub lr_decay_period: usize,
    pub batch_size: usize,
    /// Upper bound on the epochs of both stages together.
    pub epoch_cap: usize,
    /// Global gradient-norm clip per step; off when absent.
    pub grad_clip: Option<f64>,
    /// Start each round from the previous round's weights.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 6,
            pretrain_lr: 0.05,
            pretrain_optimizer: OptimizerKind::Sgd,
            finetune_epochs: 3,
            finetune_lr: 1e-3,
            nonlocal_lr: 1e-2,
            finetune_optimizer: OptimizerKind::Adam,
            lr_decay_factor: 10.0,
            lr_decay_period: 3,
            batch_size: 16,
            epoch_cap: 25,
            grad_clip: Some(5.0),
            warm_start: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Error::invalid(format!("train field `{name}`: {msg}"));
        if self.pretrain_epochs == 0 {
            return Err(field("pretrain_epochs", "must be at least 1"));
        }
        if self.finetune_epochs == 0 {
            return Err(field("finetune_epochs", "must be at least 1"));
        }
        if self.pretrain_epochs + self.finetune_epochs > self.epoch_cap {
            return Err(field("epoch_cap", "pretrain_epochs + finetune_epochs exceeds the cap"));
        }
        for (name, v) in [
            ("pretrain_lr", self.pretrain_lr),
            ("finetune_lr", self.finetune_lr),
            ("nonlocal_lr", self.nonlocal_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(field(name, "must be positive"));
            }
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor >= 1.0) {
            return Err(field("lr_decay_factor", "must be at least 1"));
        }
        if self.lr_decay_period == 0 {
            return Err(field("lr_decay_period", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be at least 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(field("grad_clip", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Step decay: `lr0 / factor^(epoch / period)` with integer division.
pub fn lr_at(lr0: f64, epoch: usize, factor: f64, period: usize) -> f64 {
    lr0 / factor.powi((epoch / period) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub mean_loss: f64,
}

/// One labeled training example: clip features and the annotated phase.
#[derive(Clone, Debug)]
pub struct Example {
    pub features: Tensor,
    pub label: usize,
}

pub fn examples(dataset: &Dataset, labeled: &[(&Clip, usize)]) -> Vec<Example> {
    labeled
        .iter()
        .map(|(c, label)| Example {
            features: c.features(dataset),
            label: *label,
        })
        .collect()
}

fn run_stage(
    model: &mut ModelParams,
    data: &[Example],
    cfg: &TrainConfig,
    stage: Stage,
    seed: u64,
    log: &mut Vec<EpochLog>,
) -> Result<()> {
    let (epochs, kind, use_nl) = match stage {
        Stage::Pretrain => (cfg.pretrain_epochs, cfg.pretrain_optimizer, false),
        Stage::Finetune => (cfg.finetune_epochs, cfg.finetune_optimizer, true),
    };
    let mut opt = make_optimizer(kind);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for epoch in 0..epochs {
        let mut rng = rng_for(seed, &[STREAM_SHUFFLE, stage as u64, epoch as u64]);
        order.shuffle(&mut rng);
        let decay = |lr0: f64| lr_at(lr0, epoch, cfg.lr_decay_factor, cfg.lr_decay_period);
        let lrs: Vec<f64> = (0..model.params().len())
            .map(|i| match stage {
                Stage::Pretrain if is_nonlocal_param(i) => 0.0,
                Stage::Pretrain => decay(cfg.pretrain_lr),
                Stage::Finetune if is_nonlocal_param(i) => decay(cfg.nonlocal_lr),
                Stage::Finetune => decay(cfg.finetune_lr),
            })
            .collect();
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let diverged = |reason: String| Error::Divergence {
                stage: stage.name(),
                epoch,
                step,
                reason,
            };
            let per_clip: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&i| loss_and_grads(model, &data[i].features, data[i].label, use_nl))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(what) => diverged(format!("non-finite {what}")),
                    other => other,
                })?;
            let mut total: Vec<Tensor> = per_clip[0].1.clone();
            let mut loss = per_clip[0].0;
            for (l, g) in &per_clip[1..] {
                loss += l;
                for (t, gi) in total.iter_mut().zip(g) {
                    t.add_assign(gi);
                }
            }
            let n = batch.len() as f64;
            if !loss.is_finite() {
                return Err(diverged(format!("loss is {loss}")));
            }
            let norm = total
                .iter()
                .flat_map(|t| t.data())
                .map(|g| (g / n).powi(2))
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() {
                return Err(diverged("gradient norm is not finite".into()));
            }
            let clip_scale = match cfg.grad_clip {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate_tensors(&total, clip_scale / n);
            opt.step(params, &lrs);
            if params.iter().any(|p| p.value().data().iter().any(|v| !v.is_finite())) {
                return Err(diverged("parameters became non-finite".into()));
            }
            epoch_loss += loss;
            step += 1;
        }
        log.push(EpochLog {
            stage,
            epoch,
            mean_loss: epoch_loss / data.len() as f64,
        });
    }
    Ok(())
}

/// Trains from a seeded initialization, or from `start` when given. The
/// non-local block is re-attached fresh unless `start` already carries one.
pub fn train_model(
    data: &[Example],
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    seed: u64,
    start: Option<&ModelParams>,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    cfg.validate()?;
    encoder.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training needs at least one labeled clip"));
    }
    let mut model = match start {
        Some(m) => m.clone(),
        None => ModelParams::init(encoder, seed)?,
    };
    let mut log = Vec::new();
    let reattach = !model.nonlocal_active();
    model.set_nonlocal_active(false);
    run_stage(&mut model, data, cfg, Stage::Pretrain, seed, &mut log)?;
    if reattach {
        model.attach_nonlocal(seed);
    } else {
        model.set_nonlocal_active(true);
    }
    run_stage(&mut model, data, cfg, Stage::Finetune, seed, &mut log)?;
    Ok((model, log))
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(model: &ModelParams, data: &[Example]) -> Result<f64> {
    let hits: Vec<bool> = data
        .par_iter()
        .map(|e| Ok(argmax(logits(&e.features, model)?.data()) == e.label))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len().max(1) as f64)
}
