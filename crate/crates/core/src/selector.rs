//! Clip scoring and ranked batch selection.
//!
//! Every strategy emits scores where lower means more worth annotating, so
//! one ascending sort serves all of them. Entropy scores are negated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{encode, predictive_entropy, ModelParams};
use crate::datamodel::{ClipCatalog, ClipId, Dataset, PoolState};
use crate::error::{Error, Result};
use crate::nonlocal::{dependency_matrix, MatrixMode, POOL_STRIDE, POOL_WINDOW};
use crate::numkernel::{matmul, maxpool_time};
use crate::seed::{hash_str, rng_for, STREAM_DROPOUT, STREAM_RANDOM_SCORE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Lrtd,
    Random,
    EntropyMean,
    EntropyMax,
    EmbDot,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Lrtd,
        Strategy::Random,
        Strategy::EntropyMean,
        Strategy::EntropyMax,
        Strategy::EmbDot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Lrtd => "lrtd",
            Strategy::Random => "random",
            Strategy::EntropyMean => "entropy_mean",
            Strategy::EntropyMax => "entropy_max",
            Strategy::EmbDot => "emb_dot",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: ClipId,
    pub score: f64,
    pub strategy: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Number of largest matrix entries averaged into the clip score.
    pub n_m: usize,
    /// Clips added per round as a fraction of all pool clips.
    pub batch_fraction: f64,
    pub strategy: Strategy,
    pub mode: MatrixMode,
    /// Stochastic passes for the entropy strategies.
    pub mc_passes: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n_m: 5,
            batch_fraction: 0.1,
            strategy: Strategy::Lrtd,
            mode: MatrixMode::Raw,
            mc_passes: 10,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_m == 0 {
            return Err(Error::invalid("selection field `n_m`: must be at least 1"));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(Error::invalid("selection field `batch_fraction`: must lie in (0, 1]"));
        }
        if self.mc_passes == 0 {
            return Err(Error::invalid("selection field `mc_passes`: must be at least 1"));
        }
        Ok(())
    }
}

/// Mean of the `n_m` largest entries; `n_m` is capped at the entry count.
pub fn lrtd_score(entries: &[f64], n_m: usize) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::invalid("lrtd_score of an empty matrix"));
    }
    if n_m == 0 {
        return Err(Error::invalid("n_m must be at least 1"));
    }
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dependency matrix entry".into()));
    }
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = n_m.min(sorted.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// The `n_c` lowest-scoring unlabeled clips, ties broken by clip id.
pub fn select_batch(pool: &PoolState, scores: &[ClipScore], n_c: usize) -> Result<Vec<ClipId>> {
    let unlabeled = pool.unlabeled();
    let mut seen = BTreeSet::new();
    for s in scores {
        if !unlabeled.contains(&s.clip_id) {
            return Err(Error::invalid(format!(
                "score given for clip {} outside the unlabeled pool",
                s.clip_id
            )));
        }
        if !seen.insert(&s.clip_id) {
            return Err(Error::invalid(format!("clip {} scored twice", s.clip_id)));
        }
        if !s.score.is_finite() {
            return Err(Error::NonFinite(format!("score of clip {}", s.clip_id)));
        }
    }
    if let Some(missing) = unlabeled.iter().find(|id| !seen.contains(id)) {
        return Err(Error::invalid(format!("no score for unlabeled clip {missing}")));
    }
    if n_c > unlabeled.len() {
        return Err(Error::invalid(format!(
            "cannot select {n_c} clips from {} unlabeled",
            unlabeled.len()
        )));
    }
    let mut ranked: Vec<&ClipScore> = scores.iter().collect();
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.clip_id.cmp(&b.clip_id)));
    Ok(ranked[..n_c].iter().map(|s| s.clip_id.clone()).collect())
}

/// Result of scoring the unlabeled pool.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolScores {
    /// One score per unlabeled clip, in clip id order.
    pub scores: Vec<ClipScore>,
    /// Logits that hit the non-local clamp (lrtd only).
    pub clamp_events: usize,
}

/// Scores every unlabeled clip with the configured strategy. `seed` and
/// `round` key the random and dropout streams.
pub fn score_pool(
    model: &ModelParams,
    dataset: &Dataset,
    catalog: &ClipCatalog,
    pool: &PoolState,
    cfg: &SelectionConfig,
    seed: u64,
    round: usize,
) -> Result<PoolScores> {
    cfg.validate()?;
    let ids: Vec<&ClipId> = pool.unlabeled().iter().collect();
    let clip = |id: &ClipId| {
        catalog
            .get(id)
            .ok_or_else(|| Error::invalid(format!("clip {id} is not in the catalog")))
    };
    let strategy = cfg.strategy;
    let results: Vec<(f64, usize)> = match strategy {
        Strategy::Random => ids
            .iter()
            .map(|id| {
                let mut rng = rng_for(
                    seed,
                    &[STREAM_RANDOM_SCORE, round as u64, hash_str(&id.video_id), id.end as u64],
                );
                Ok((rng.random::<f64>(), 0))
            })
            .collect::<Result<_>>()?,
        Strategy::Lrtd => {
            let nl = model.nonlocal_params();
            ids.par_iter()
                .map(|id| {
                    let hs = encode(&clip(id)?.features(dataset), model)?;
                    let m = dependency_matrix(&hs.0, &nl, cfg.mode)?;
                    Ok((lrtd_score(m.entries(), cfg.n_m)?, m.clamp_events()))
                })
                .collect::<Result<_>>()?
        }
        Strategy::EmbDot => ids
            .par_iter()
            .map(|id| {
                let hs = encode(&clip(id)?.features(dataset), model)?;
                let (pooled, _) = maxpool_time(&hs.0, POOL_WINDOW, POOL_STRIDE)?;
                let m = matmul(&hs.0.transpose(), &pooled)?;
                Ok((lrtd_score(m.data(), cfg.n_m)?, 0))
            })
            .collect::<Result<_>>()?,
        Strategy::EntropyMean | Strategy::EntropyMax => {
            let per_frame = frame_entropies(model, dataset, catalog, &ids, cfg.mc_passes, seed, round)?;
            ids.iter()
                .map(|id| {
                    let c = clip(id)?;
                    let t = model.config().clip_len;
                    let vals: Vec<f64> = (c.start.max(t - 1)..=id.end)
                        .map(|f| per_frame[&(c.video, f)])
                        .collect();
                    let agg = if strategy == Strategy::EntropyMean {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    } else {
                        vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    };
                    Ok((-agg, 0))
                })
                .collect::<Result<_>>()?
        }
    };
    let clamp_events = results.iter().map(|r| r.1).sum();
    let scores = ids
        .into_iter()
        .zip(results)
        .map(|(id, (score, _))| ClipScore {
            clip_id: id.clone(),
            score,
            strategy,
        })
        .collect();
    Ok(PoolScores { scores, clamp_events })
}

/// Predictive entropy of every frame covered by `ids` that has a full clip
/// ending at it. Frame `f` is predicted from the clip ending at `f`.
fn frame_entropies(
    model: &ModelParams,
    dataset: &Dataset,
    catalog: &ClipCatalog,
    ids: &[&ClipId],
    passes: usize,
    seed: u64,
    round: usize,
) -> Result<BTreeMap<(usize, usize), f64>> {
    let t = model.config().clip_len;
    let mut frames = BTreeSet::new();
    for id in ids {
        let c = catalog
            .get(id)
            .ok_or_else(|| Error::invalid(format!("clip {id} is not in the catalog")))?;
        for f in c.start.max(t - 1)..=id.end {
            frames.insert((c.video, f));
        }
    }
    let frames: Vec<(usize, usize)> = frames.into_iter().collect();
    let rate = model.config().dropout;
    let values: Vec<f64> = frames
        .par_iter()
        .map(|&(v, f)| {
            let video = &dataset.videos[v];
            let x = crate::numkernel::Tensor::from_fn(dataset.feature_dim, t, |d, j| {
                video.frames[f + 1 - t + j].feature[d]
            });
            let mut rng = rng_for(seed, &[STREAM_DROPOUT, round as u64, hash_str(&video.id), f as u64]);
            predictive_entropy(&x, model, passes, rate, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(frames.into_iter().zip(values).collect())
}

/// Writes `round\tstrategy\tclip_id\tscore\tselected` rows.
pub fn write_scores_tsv<W: Write>(
    mut out: W,
    round: usize,
    scores: &[ClipScore],
    selected: &[ClipId],
) -> std::io::Result<()> {
    let chosen: BTreeSet<&ClipId> = selected.iter().collect();
    writeln!(out, "round\tstrategy\tclip_id\tscore\tselected")?;
    for s in scores {
        writeln!(
            out,
            "{round}\t{}\t{}\t{}\t{}",
            s.strategy,
            s.clip_id,
            s.score,
            u8::from(chosen.contains(&s.clip_id))
        )?;
    }
    Ok(())
}
