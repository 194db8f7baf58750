use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::paired_significance;
use super::train::{examples, train_model, TrainConfig};
use crate::backbone::{argmax, logits, EncoderConfig, ModelParams};
use crate::datamodel::{init_pool, Clip, ClipCatalog, ClipId, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{eval_video, selection_histogram, DatasetMetrics, MetricsReport, SelectionHistogram};
use crate::selector::{score_pool, select_batch, PoolScores, SelectionConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    FixedBudget,
    Significance,
}

/// Which held-out videos feed the significance stop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopSplit {
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopRule {
    pub mode: StopMode,
    pub max_fraction: f64,
    pub alpha: f64,
    pub split: StopSplit,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            mode: StopMode::FixedBudget,
            max_fraction: 0.5,
            alpha: 0.05,
            split: StopSplit::Validation,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_fraction > 0.0 && self.max_fraction <= 1.0) {
            return Err(Error::invalid("stop field `max_fraction`: must lie in (0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("stop field `alpha`: must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Video ids of each split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub validation: Vec<String>,
}

impl Split {
    /// Nonempty train and test lists, no duplicates, no shared videos, and
    /// every id present in the dataset.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::invalid("split needs nonempty train and test video lists"));
        }
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for (name, list) in [
            ("train", &self.train),
            ("test", &self.test),
            ("validation", &self.validation),
        ] {
            for id in list {
                if dataset.video_index(id).is_none() {
                    return Err(Error::invalid(format!("{name} split names unknown video {id}")));
                }
                if let Some(other) = seen.insert(id, name) {
                    return Err(Error::invalid(format!(
                        "video {id} appears in both {other} and {name} splits"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub stop: StopRule,
    pub init_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            stop: StopRule::default(),
            init_fraction: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.selection.validate()?;
        self.stop.validate()?;
        if !(self.init_fraction > 0.0 && self.init_fraction < 1.0) {
            return Err(Error::invalid("experiment field `init_fraction`: must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Nominal labeled fraction after `round` acquisitions.
    pub fn target_fraction(&self, round: usize) -> f64 {
        clean_fraction(self.init_fraction + round as f64 * self.selection.batch_fraction)
    }
}

/// Rounds away accumulated binary noise such as `0.30000000000000004`.
pub fn clean_fraction(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Frame predictions for one video. Frame `f` is predicted from the clip
/// ending at `f`, so the first `T − 1` frames are not scored.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoPredictions {
    pub video_id: String,
    pub frames: Vec<usize>,
    pub gt: Vec<usize>,
    pub pred: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<VideoPredictions>,
}

pub trait Evaluator {
    fn evaluate(&self, model: &ModelParams, videos: &[String], round: usize) -> Result<Evaluation>;
}

/// Evaluates the model on dataset videos.
pub struct ModelEvaluator<'a> {
    pub dataset: &'a Dataset,
}

pub fn predict_video(model: &ModelParams, dataset: &Dataset, video_id: &str) -> Result<VideoPredictions> {
    let idx = dataset
        .video_index(video_id)
        .ok_or_else(|| Error::invalid(format!("unknown video {video_id}")))?;
    let t = model.config().clip_len;
    let clips = crate::datamodel::make_clips(&dataset.videos[idx], idx, t)?;
    if clips.is_empty() {
        return Err(Error::invalid(format!("video {video_id} is shorter than one clip")));
    }
    let pred: Vec<usize> = clips
        .par_iter()
        .map(|c| Ok(argmax(logits(&c.features(dataset), model)?.data())))
        .collect::<Result<_>>()?;
    Ok(VideoPredictions {
        video_id: video_id.to_string(),
        frames: clips.iter().map(|c| c.id.end).collect(),
        gt: clips.iter().map(|c| c.label).collect(),
        pred,
    })
}

impl Evaluator for ModelEvaluator<'_> {
    fn evaluate(&self, model: &ModelParams, videos: &[String], _round: usize) -> Result<Evaluation> {
        let predictions: Vec<VideoPredictions> = videos
            .iter()
            .map(|v| predict_video(model, self.dataset, v))
            .collect::<Result<_>>()?;
        let per_video = predictions
            .iter()
            .map(|p| Ok((p.video_id.clone(), eval_video(&p.gt, &p.pred)?)))
            .collect::<Result<_>>()?;
        Ok(Evaluation {
            report: MetricsReport::new(per_video)?,
            predictions,
        })
    }
}

/// Source of phase labels for clips sent for annotation.
pub trait AnnotationProvider {
    fn annotate(&mut self, clips: &[&Clip]) -> Result<Vec<usize>>;
}

/// Answers with the dataset ground truth.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleAnnotator;

impl AnnotationProvider for OracleAnnotator {
    fn annotate(&mut self, clips: &[&Clip]) -> Result<Vec<usize>> {
        Ok(clips.iter().map(|c| c.label).collect())
    }
}

/// Hooks for persisting round artifacts.
pub trait RoundObserver {
    fn on_round(&mut self, record: &RoundRecord, model: &ModelParams, eval: &Evaluation) -> Result<()>;
    fn on_selection(&mut self, round: usize, scores: &PoolScores, selected: &[ClipId]) -> Result<()>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoopObserver;

impl RoundObserver for NoopObserver {
    fn on_round(&mut self, _: &RoundRecord, _: &ModelParams, _: &Evaluation) -> Result<()> {
        Ok(())
    }

    fn on_selection(&mut self, _: usize, _: &PoolScores, _: &[ClipId]) -> Result<()> {
        Ok(())
    }
}

/// Outcome of one round. Equality ignores wall time.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: usize,
    /// Nominal budget fraction.
    pub fraction: f64,
    pub labeled: usize,
    pub total: usize,
    /// Clips newly labeled for this round.
    pub selected: Vec<ClipId>,
    /// Phase composition of `selected`; absent for the random initial pool.
    pub histogram: Option<SelectionHistogram>,
    /// Test accuracy per video.
    pub accuracies: Vec<(String, f64)>,
    pub metrics: DatasetMetrics,
    /// Paired test of test accuracies against the previous round.
    pub p_value: Option<f64>,
    /// Paired test on the split used by the significance stop.
    pub stop_p_value: Option<f64>,
    pub wall_secs: f64,
}

impl PartialEq for RoundRecord {
    fn eq(&self, o: &Self) -> bool {
        self.round == o.round
            && self.fraction == o.fraction
            && self.labeled == o.labeled
            && self.total == o.total
            && self.selected == o.selected
            && self.histogram == o.histogram
            && self.accuracies == o.accuracies
            && self.metrics == o.metrics
            && self.p_value == o.p_value
            && self.stop_p_value == o.stop_p_value
    }
}

impl RoundRecord {
    pub fn test_accuracies(&self) -> Vec<f64> {
        self.accuracies.iter().map(|a| a.1).collect()
    }
}

/// Runs the acquisition loop on the train videos of `split`.
#[allow(clippy::too_many_arguments)]
pub fn run_active_learning(
    dataset: &Dataset,
    split: &Split,
    cfg: &ExperimentConfig,
    seed: u64,
    evaluator: &dyn Evaluator,
    annotator: &mut dyn AnnotationProvider,
    observer: &mut dyn RoundObserver,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    split.validate(dataset)?;
    if cfg.encoder.input_dim != dataset.feature_dim {
        return Err(Error::invalid(format!(
            "encoder input_dim {} does not match dataset feature dim {}",
            cfg.encoder.input_dim, dataset.feature_dim
        )));
    }
    if cfg.encoder.num_phases != dataset.num_phases {
        return Err(Error::invalid(format!(
            "encoder num_phases {} does not match dataset phase count {}",
            cfg.encoder.num_phases, dataset.num_phases
        )));
    }
    let significance = cfg.stop.mode == StopMode::Significance;
    let stop_videos: &[String] = match cfg.stop.split {
        StopSplit::Test => &split.test,
        StopSplit::Validation => &split.validation,
    };
    if significance && stop_videos.is_empty() {
        return Err(Error::invalid(
            "significance stop on the validation split needs validation videos",
        ));
    }
    let catalog = ClipCatalog::build(dataset, &split.train, cfg.encoder.clip_len)?;
    let ids: Vec<ClipId> = catalog.ids().cloned().collect();
    let total = ids.len();
    let mut pool = init_pool(&ids, cfg.init_fraction, seed)?;
    if pool.labeled().is_empty() {
        return Err(Error::invalid("initial fraction labels no clips"));
    }
    let mut labels: BTreeMap<ClipId, usize> = BTreeMap::new();
    let mut newly: Vec<ClipId> = pool.labeled().iter().cloned().collect();
    let mut histogram = None;
    let mut records: Vec<RoundRecord> = Vec::new();
    let mut prev_model: Option<ModelParams> = None;
    let mut prev_stop: Option<Vec<f64>> = None;
    for round in 0.. {
        let started = Instant::now();
        let fresh: Vec<&Clip> = newly.iter().map(|id| catalog.get(id).expect("catalog clip")).collect();
        let answers = annotator.annotate(&fresh)?;
        if answers.len() != fresh.len() {
            return Err(Error::invalid("annotator returned the wrong number of labels"));
        }
        for (c, l) in fresh.iter().zip(answers) {
            if l >= dataset.num_phases {
                return Err(Error::invalid(format!("annotator gave phase {l} for clip {}", c.id)));
            }
            labels.insert(c.id.clone(), l);
        }
        let labeled: Vec<(&Clip, usize)> = pool
            .labeled()
            .iter()
            .map(|id| (catalog.get(id).expect("catalog clip"), labels[id]))
            .collect();
        let start = if cfg.train.warm_start {
            prev_model.as_ref()
        } else {
            None
        };
        let (model, _) = train_model(&examples(dataset, &labeled), &cfg.encoder, &cfg.train, seed, start)?;
        let eval = evaluator.evaluate(&model, &split.test, round)?;
        let accs = eval.report.accuracies();
        let p_value = match records.last() {
            Some(prev) => Some(paired_significance(&accs, &prev.test_accuracies())?),
            None => None,
        };
        let stop_accs = if !significance {
            None
        } else if cfg.stop.split == StopSplit::Test {
            Some(accs.clone())
        } else {
            Some(evaluator.evaluate(&model, stop_videos, round)?.report.accuracies())
        };
        let stop_p_value = match (&stop_accs, &prev_stop) {
            (Some(cur), Some(prev)) => Some(paired_significance(cur, prev)?),
            _ => None,
        };
        let fraction = cfg.target_fraction(round);
        let record = RoundRecord {
            round,
            fraction,
            labeled: pool.labeled().len(),
            total,
            selected: std::mem::take(&mut newly),
            histogram: histogram.take(),
            accuracies: eval.report.per_video.iter().map(|(v, m)| (v.clone(), m.acc)).collect(),
            metrics: eval.report.aggregate.clone(),
            p_value,
            stop_p_value,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        observer.on_round(&record, &model, &eval)?;
        records.push(record);
        prev_stop = stop_accs;

        if significance && stop_p_value.is_some_and(|p| p > cfg.stop.alpha) {
            break;
        }
        let next = cfg.target_fraction(round + 1);
        if fraction >= cfg.stop.max_fraction - 1e-9 || next > cfg.stop.max_fraction + 1e-9 || next > 1.0 + 1e-9 {
            break;
        }
        let n_c = ((next * total as f64).round() as usize)
            .saturating_sub(pool.labeled().len())
            .min(pool.unlabeled().len());
        if n_c == 0 {
            break;
        }
        let scores = score_pool(&model, dataset, &catalog, &pool, &cfg.selection, seed, round)?;
        let chosen = select_batch(&pool, &scores.scores, n_c)?;
        observer.on_selection(round, &scores, &chosen)?;
        let chosen_clips: Vec<&Clip> = chosen.iter().map(|id| catalog.get(id).expect("catalog clip")).collect();
        histogram = Some(selection_histogram(&chosen_clips, dataset)?);
        pool.label(&chosen, cfg.selection.strategy.name(), scores.scores)?;
        debug_assert!(pool.check_partition(catalog.ids()).is_ok());
        newly = chosen;
        prev_model = Some(model);
    }
    Ok(records)
}

/// Per-round pairwise p-values between strategies on test accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub round: usize,
    pub a: String,
    pub b: String,
    pub mean_diff: f64,
    pub p_value: f64,
}

pub fn pairwise_tests(runs: &[(String, Vec<RoundRecord>)]) -> Result<Vec<PairwiseTest>> {
    let mut out = Vec::new();
    let max_round = runs.iter().map(|r| r.1.len()).max().unwrap_or(0);
    for round in 0..max_round {
        for i in 0..runs.len() {
            for j in i + 1..runs.len() {
                let (Some(ra), Some(rb)) = (runs[i].1.get(round), runs[j].1.get(round)) else {
                    continue;
                };
                let (a, b) = (ra.test_accuracies(), rb.test_accuracies());
                let mean_diff = a.iter().zip(&b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64;
                out.push(PairwiseTest {
                    round,
                    a: runs[i].0.clone(),
                    b: runs[j].0.clone(),
                    mean_diff,
                    p_value: paired_significance(&a, &b)?,
                });
            }
        }
    }
    Ok(out)
}

/// Labeled-set sizes are consistent with exact budget accounting.
pub fn check_budget(records: &[RoundRecord], cfg: &ExperimentConfig) -> Result<()> {
    let mut prev: Option<&RoundRecord> = None;
    let mut seen: BTreeSet<&ClipId> = BTreeSet::new();
    for r in records {
        let expect = (cfg.target_fraction(r.round) * r.total as f64).round() as usize;
        if r.labeled != expect {
            return Err(Error::invalid(format!(
                "round {}: {} labeled, expected {expect}",
                r.round, r.labeled
            )));
        }
        if let Some(p) = prev {
            if r.fraction <= p.fraction {
                return Err(Error::invalid("labeled fraction did not increase"));
            }
        }
        for id in &r.selected {
            if !seen.insert(id) {
                return Err(Error::invalid(format!("clip {id} labeled twice")));
            }
        }
        prev = Some(r);
    }
    Ok(())
}
