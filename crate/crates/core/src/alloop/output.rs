//! On-disk artifacts of an experiment.
//!
//! ```text
//! <out>/initial_pool.tsv
//! <out>/rounds/round_k/{checkpoint.bin, metrics.json, predictions.tsv}
//! <out>/rounds/round_k/{scores.tsv, selected.tsv}   (rounds that acquired clips)
//! <out>/summary.csv, curve.csv
//! <out>/run.log                                     (wall times; not reproducible)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiment::{
    pairwise_tests, run_active_learning, Evaluation, ExperimentConfig, ModelEvaluator, OracleAnnotator, PairwiseTest,
    RoundObserver, RoundRecord, Split, VideoPredictions,
};
use crate::backbone::{write_checkpoint, ModelParams};
use crate::datamodel::{ClipId, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{write_curve_csv, CurvePoint, MetricsReport, SelectionHistogram};
use crate::selector::{write_scores_tsv, PoolScores, Strategy};

fn io_ctx(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(format!("write {}", path.display()), e)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_ctx(dir))?;
    }
    fs::write(path, bytes).map_err(io_ctx(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

/// Writes per-round artifacts below `root` and appends wall times to `run.log`.
pub struct OutputWriter {
    root: PathBuf,
    log: String,
}

#[derive(Serialize)]
struct RoundMetricsJson<'a> {
    round: usize,
    fraction: f64,
    labeled: usize,
    total: usize,
    p_value: Option<f64>,
    stop_p_value: Option<f64>,
    histogram: &'a Option<SelectionHistogram>,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

impl OutputWriter {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_ctx(&root))?;
        Ok(OutputWriter {
            root,
            log: String::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn round_dir(&self, round: usize) -> PathBuf {
        self.root.join("rounds").join(format!("round_{round}"))
    }

    pub fn log_line(&mut self, line: &str) -> Result<()> {
        self.log.push_str(line);
        self.log.push('\n');
        write_file(&self.root.join("run.log"), self.log.as_bytes())
    }
}

pub fn write_predictions_tsv<W: Write>(mut out: W, eval: &Evaluation) -> std::io::Result<()> {
    writeln!(out, "video_id\tframe_index\tgt\tpred")?;
    for p in &eval.predictions {
        for ((f, g), q) in p.frames.iter().zip(&p.gt).zip(&p.pred) {
            writeln!(out, "{}\t{f}\t{g}\t{q}", p.video_id)?;
        }
    }
    Ok(())
}

/// Reads the `predictions.tsv` format back, grouping rows by video in order
/// of first appearance.
pub fn read_predictions_tsv(text: &str, path: &Path) -> Result<Vec<VideoPredictions>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "video_id\tframe_index\tgt\tpred")) => {}
        _ => {
            return Err(Error::parse_line(
                path,
                1,
                "expected header video_id\tframe_index\tgt\tpred",
            ))
        }
    }
    let mut out: Vec<VideoPredictions> = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse_line(
                path,
                i + 1,
                format!("expected 4 columns, got {}", cols.len()),
            ));
        }
        let num = |k: usize, name: &str| {
            cols[k]
                .parse::<usize>()
                .map_err(|_| Error::parse_line(path, i + 1, format!("bad {name} `{}`", cols[k])))
        };
        let (frame, gt, pred) = (num(1, "frame_index")?, num(2, "gt")?, num(3, "pred")?);
        let idx = match out.iter().position(|v| v.video_id == cols[0]) {
            Some(idx) => idx,
            None => {
                out.push(VideoPredictions {
                    video_id: cols[0].to_string(),
                    frames: Vec::new(),
                    gt: Vec::new(),
                    pred: Vec::new(),
                });
                out.len() - 1
            }
        };
        let v = &mut out[idx];
        v.frames.push(frame);
        v.gt.push(gt);
        v.pred.push(pred);
    }
    if out.is_empty() {
        return Err(Error::parse_line(path, 1, "no prediction rows"));
    }
    Ok(out)
}

fn clip_list(ids: &[ClipId]) -> String {
    let mut s = String::from("clip_id\n");
    for id in ids {
        let _ = writeln!(s, "{id}");
    }
    s
}

impl RoundObserver for OutputWriter {
    fn on_round(&mut self, record: &RoundRecord, model: &ModelParams, eval: &Evaluation) -> Result<()> {
        let dir = self.round_dir(record.round);
        fs::create_dir_all(&dir).map_err(io_ctx(&dir))?;
        if record.round == 0 {
            write_file(
                &self.root.join("initial_pool.tsv"),
                clip_list(&record.selected).as_bytes(),
            )?;
        }
        write_checkpoint(model, &dir.join("checkpoint.bin"))?;
        write_json(
            &dir.join("metrics.json"),
            &RoundMetricsJson {
                round: record.round,
                fraction: record.fraction,
                labeled: record.labeled,
                total: record.total,
                p_value: record.p_value,
                stop_p_value: record.stop_p_value,
                histogram: &record.histogram,
                report: &eval.report,
            },
        )?;
        let mut buf = Vec::new();
        write_predictions_tsv(&mut buf, eval).expect("in-memory write");
        write_file(&dir.join("predictions.tsv"), &buf)?;
        self.log_line(&format!(
            "round {} fraction {} train+eval {:.3}s",
            record.round, record.fraction, record.wall_secs
        ))
    }

    fn on_selection(&mut self, round: usize, scores: &PoolScores, selected: &[ClipId]) -> Result<()> {
        let dir = self.round_dir(round);
        let mut buf = Vec::new();
        write_scores_tsv(&mut buf, round, &scores.scores, selected).expect("in-memory write");
        write_file(&dir.join("scores.tsv"), &buf)?;
        write_file(&dir.join("selected.tsv"), clip_list(selected).as_bytes())?;
        if scores.clamp_events > 0 {
            self.log_line(&format!("round {round}: {} clamped logits", scores.clamp_events))?;
        }
        Ok(())
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `summary.csv`: one row per round per strategy.
pub fn write_summary_csv<W: Write>(mut out: W, runs: &[(String, Vec<RoundRecord>)]) -> std::io::Result<()> {
    writeln!(
        out,
        "strategy,round,fraction,labeled,acc,acc_std,pr,pr_std,re,re_std,ja,ja_std,f1,f1_std,p_value"
    )?;
    for (name, records) in runs {
        for r in records {
            let m = &r.metrics;
            let pair = |v: Option<crate::metrics::MeanStd>| {
                format!("{},{}", opt_cell(v.map(|x| x.mean)), opt_cell(v.map(|x| x.std)))
            };
            writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{},{},{}",
                r.round,
                r.fraction,
                r.labeled,
                m.acc.mean,
                m.acc.std,
                pair(m.pr),
                pair(m.re),
                pair(m.ja),
                pair(m.f1),
                opt_cell(r.p_value)
            )?;
        }
    }
    Ok(())
}

pub fn curve_points(runs: &[(String, Vec<RoundRecord>)]) -> Vec<CurvePoint> {
    runs.iter()
        .flat_map(|(name, recs)| {
            recs.iter().map(move |r| CurvePoint {
                strategy: name.clone(),
                fraction: r.fraction,
                metrics: r.metrics.clone(),
            })
        })
        .collect()
}

fn write_tables(root: &Path, runs: &[(String, Vec<RoundRecord>)]) -> Result<()> {
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, runs).expect("in-memory write");
    write_file(&root.join("summary.csv"), &buf)?;
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &curve_points(runs)).expect("in-memory write");
    write_file(&root.join("curve.csv"), &buf)
}

/// One strategy run writing its artifacts into `out`.
pub fn run_experiment(
    dataset: &Dataset,
    split: &Split,
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
) -> Result<Vec<RoundRecord>> {
    let mut writer = OutputWriter::new(out)?;
    let evaluator = ModelEvaluator { dataset };
    let records = run_active_learning(dataset, split, cfg, seed, &evaluator, &mut OracleAnnotator, &mut writer)?;
    write_tables(out, &[(cfg.selection.strategy.name().to_string(), records.clone())])?;
    Ok(records)
}

#[derive(Serialize)]
struct HistogramEntry<'a> {
    round: usize,
    #[serde(flatten)]
    histogram: &'a SelectionHistogram,
}

#[derive(Serialize)]
struct ComparisonJson<'a> {
    strategies: Vec<&'a str>,
    seed: u64,
    pairwise: &'a [PairwiseTest],
    histograms: std::collections::BTreeMap<&'a str, Vec<HistogramEntry<'a>>>,
}

/// Runs every strategy from the same seed into `out/<strategy>/` and writes
/// the combined `summary.csv`, `curve.csv`, `comparison.json` and `report.txt`.
pub fn run_comparison(
    dataset: &Dataset,
    split: &Split,
    cfg: &ExperimentConfig,
    strategies: &[Strategy],
    seed: u64,
    out: &Path,
) -> Result<Vec<(String, Vec<RoundRecord>)>> {
    if strategies.len() < 2 {
        return Err(Error::invalid("comparison needs at least two strategies"));
    }
    let mut uniq = strategies.to_vec();
    uniq.sort();
    uniq.dedup();
    if uniq.len() != strategies.len() {
        return Err(Error::invalid("comparison lists a strategy twice"));
    }
    let mut runs = Vec::new();
    for &s in strategies {
        let mut c = cfg.clone();
        c.selection.strategy = s;
        let records = run_experiment(dataset, split, &c, seed, &out.join(s.name()))?;
        runs.push((s.name().to_string(), records));
    }
    write_tables(out, &runs)?;
    let tests = pairwise_tests(&runs)?;
    let histograms = runs
        .iter()
        .map(|(name, recs)| {
            let h = recs
                .iter()
                .filter_map(|r| {
                    r.histogram.as_ref().map(|h| HistogramEntry {
                        round: r.round,
                        histogram: h,
                    })
                })
                .collect();
            (name.as_str(), h)
        })
        .collect();
    write_json(
        &out.join("comparison.json"),
        &ComparisonJson {
            strategies: runs.iter().map(|r| r.0.as_str()).collect(),
            seed,
            pairwise: &tests,
            histograms,
        },
    )?;
    write_file(&out.join("report.txt"), comparison_report(&runs, &tests).as_bytes())?;
    Ok(runs)
}

pub fn comparison_report(runs: &[(String, Vec<RoundRecord>)], tests: &[PairwiseTest]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Test accuracy per round (mean ± std over test videos)");
    let rounds = runs.iter().map(|r| r.1.len()).max().unwrap_or(0);
    for round in 0..rounds {
        let frac = runs
            .iter()
            .find_map(|r| r.1.get(round))
            .map(|r| r.fraction)
            .unwrap_or(0.0);
        let _ = write!(s, "round {round} ({:.0}%):", frac * 100.0);
        for (name, recs) in runs {
            if let Some(r) = recs.get(round) {
                let _ = write!(s, "  {name} {:.4} ± {:.4}", r.metrics.acc.mean, r.metrics.acc.std);
            }
        }
        s.push('\n');
        for t in tests.iter().filter(|t| t.round == round) {
            let _ = writeln!(
                s,
                "    {} − {}: diff {:+.4}, p = {:.4}",
                t.a, t.b, t.mean_diff, t.p_value
            );
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Selected-clip phase fractions (transition share in brackets)");
    for (name, recs) in runs {
        for r in recs {
            if let Some(h) = &r.histogram {
                let fr: Vec<String> = h.phase_fractions.iter().map(|f| format!("{f:.3}")).collect();
                let _ = writeln!(
                    s,
                    "  {name} round {}: [{}] ({:.3})",
                    r.round,
                    fr.join(" "),
                    h.transition_fraction
                );
            }
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Notes: entropy strategies use MC-dropout predictive entropy and \
         select single clips like every other strategy."
    );
    s
}
