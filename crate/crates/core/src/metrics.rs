//! Frame-level evaluation: video accuracy and phase-wise precision, recall,
//! Jaccard and F1, macro-averaged per video and then summarized across
//! videos as mean ± population std.
//!
//! A phase absent from both ground truth and prediction is skipped. Precision
//! is undefined for a phase that is never predicted, recall for a phase that
//! never occurs; undefined values are left out of the averages.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Clip, Dataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: usize,
    pub pr: Option<f64>,
    pub re: Option<f64>,
    pub ja: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub acc: f64,
    pub pr: Option<f64>,
    pub re: Option<f64>,
    pub ja: Option<f64>,
    pub f1: Option<f64>,
    /// Phases present in ground truth or prediction, ascending.
    pub phases: Vec<PhaseStats>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn eval_video(gt: &[usize], pred: &[usize]) -> Result<VideoMetrics> {
    if gt.len() != pred.len() {
        return Err(Error::invalid(format!(
            "ground truth has {} frames, prediction {}",
            gt.len(),
            pred.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty video"));
    }
    let n_phases = gt.iter().chain(pred).max().expect("nonempty") + 1;
    let mut tp = vec![0usize; n_phases];
    let mut n_gt = vec![0usize; n_phases];
    let mut n_pred = vec![0usize; n_phases];
    for (&g, &p) in gt.iter().zip(pred) {
        n_gt[g] += 1;
        n_pred[p] += 1;
        if g == p {
            tp[g] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let phases: Vec<PhaseStats> = (0..n_phases)
        .filter(|&k| n_gt[k] + n_pred[k] > 0)
        .map(|k| {
            let t = tp[k] as f64;
            PhaseStats {
                phase: k,
                pr: (n_pred[k] > 0).then(|| t / n_pred[k] as f64),
                re: (n_gt[k] > 0).then(|| t / n_gt[k] as f64),
                ja: t / (n_gt[k] + n_pred[k] - tp[k]) as f64,
                f1: 2.0 * t / (n_gt[k] + n_pred[k]) as f64,
            }
        })
        .collect();
    Ok(VideoMetrics {
        acc: correct as f64 / gt.len() as f64,
        pr: mean_defined(phases.iter().map(|p| p.pr)),
        re: mean_defined(phases.iter().map(|p| p.re)),
        ja: mean_defined(phases.iter().map(|p| Some(p.ja))),
        f1: mean_defined(phases.iter().map(|p| Some(p.f1))),
        phases,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation; `None` for no values.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    if values.iter().all(|&v| v == values[0]) {
        return Some(MeanStd {
            mean: values[0],
            std: 0.0,
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd { mean, std: var.sqrt() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: usize,
    pub pr: Option<MeanStd>,
    pub re: Option<MeanStd>,
    pub ja: Option<MeanStd>,
    pub f1: Option<MeanStd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub videos: usize,
    pub acc: MeanStd,
    pub pr: Option<MeanStd>,
    pub re: Option<MeanStd>,
    pub ja: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    pub per_phase: Vec<PhaseSummary>,
}

pub fn aggregate(videos: &[VideoMetrics]) -> Result<DatasetMetrics> {
    if videos.is_empty() {
        return Err(Error::invalid("cannot aggregate zero videos"));
    }
    let col = |f: &dyn Fn(&VideoMetrics) -> Option<f64>| -> Option<MeanStd> {
        mean_std(&videos.iter().filter_map(f).collect::<Vec<_>>())
    };
    let max_phase = videos
        .iter()
        .flat_map(|v| v.phases.iter().map(|p| p.phase + 1))
        .max()
        .unwrap_or(0);
    let per_phase = (0..max_phase)
        .map(|k| {
            let stats: Vec<&PhaseStats> = videos
                .iter()
                .flat_map(|v| v.phases.iter().filter(move |p| p.phase == k))
                .collect();
            let pick = |f: &dyn Fn(&PhaseStats) -> Option<f64>| {
                mean_std(&stats.iter().filter_map(|s| f(s)).collect::<Vec<_>>())
            };
            PhaseSummary {
                phase: k,
                pr: pick(&|s| s.pr),
                re: pick(&|s| s.re),
                ja: pick(&|s| Some(s.ja)),
                f1: pick(&|s| Some(s.f1)),
            }
        })
        .collect();
    Ok(DatasetMetrics {
        videos: videos.len(),
        acc: col(&|v| Some(v.acc)).expect("nonempty"),
        pr: col(&|v| v.pr),
        re: col(&|v| v.re),
        ja: col(&|v| v.ja),
        f1: col(&|v| v.f1),
        per_phase,
    })
}

/// Phase composition of a selected batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionHistogram {
    pub clips: usize,
    /// Fraction of clips per label phase; sums to 1.
    pub phase_fractions: Vec<f64>,
    /// Fraction of clips whose frames span two or more phases.
    pub transition_fraction: f64,
}

pub fn selection_histogram(clips: &[&Clip], dataset: &Dataset) -> Result<SelectionHistogram> {
    if clips.is_empty() {
        return Err(Error::invalid("histogram of an empty selection"));
    }
    let mut counts = vec![0usize; dataset.num_phases];
    let mut transitions = 0usize;
    for c in clips {
        counts[c.label] += 1;
        if c.spans_transition(dataset) {
            transitions += 1;
        }
    }
    let n = clips.len() as f64;
    Ok(SelectionHistogram {
        clips: clips.len(),
        phase_fractions: counts.iter().map(|&c| c as f64 / n).collect(),
        transition_fraction: transitions as f64 / n,
    })
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregate: DatasetMetrics,
    pub per_video: Vec<(String, VideoMetrics)>,
}

impl MetricsReport {
    pub fn new(per_video: Vec<(String, VideoMetrics)>) -> Result<Self> {
        let vms: Vec<VideoMetrics> = per_video.iter().map(|(_, m)| m.clone()).collect();
        Ok(MetricsReport {
            aggregate: aggregate(&vms)?,
            per_video,
        })
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.per_video.iter().map(|(_, m)| m.acc).collect()
    }
}

/// One point of a budget curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub strategy: String,
    pub fraction: f64,
    pub metrics: DatasetMetrics,
}

/// Writes `strategy,fraction,metric,mean,std` with one row per metric; an
/// undefined metric leaves mean and std empty.
pub fn write_curve_csv<W: Write>(mut out: W, points: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(out, "strategy,fraction,metric,mean,std")?;
    for p in points {
        let m = &p.metrics;
        for (name, v) in [
            ("acc", Some(m.acc)),
            ("pr", m.pr),
            ("re", m.re),
            ("ja", m.ja),
            ("f1", m.f1),
        ] {
            match v {
                Some(v) => writeln!(out, "{},{},{name},{},{}", p.strategy, p.fraction, v.mean, v.std)?,
                None => writeln!(out, "{},{},{name},,", p.strategy, p.fraction)?,
            }
        }
    }
    Ok(())
}
