use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use lrtd_core::alloop::{read_predictions_tsv, run_comparison, run_experiment, write_file, write_json};
use lrtd_core::backbone::{encode, read_checkpoint, ModelParams};
use lrtd_core::datamodel::{gen_synthetic, init_pool, ClipCatalog, ClipId, Dataset, PoolState, SyntheticSpec};
use lrtd_core::metrics::{eval_video, MetricsReport};
use lrtd_core::nonlocal::{dependency_matrix, write_matrices_tsv};
use lrtd_core::selector::{score_pool, select_batch, write_scores_tsv, Strategy};
use lrtd_core::{Error, Result};

use crate::manifest::{read_json, Manifest};

/// Settings shared by every command after flag and environment overrides.
pub struct Context {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Context {
    fn manifest(&self) -> Result<Manifest> {
        let path = self
            .manifest
            .as_deref()
            .ok_or_else(|| Error::invalid("this command needs --manifest"))?;
        let mut m = Manifest::load(path)?;
        if let Some(seed) = self.seed {
            m.seed = seed;
        }
        if let Some(out) = &self.out {
            m.out = Some(std::path::absolute(out).map_err(|e| Error::io("resolve --out", e))?);
        }
        m.validate()?;
        Ok(m)
    }

    fn out_dir(&self, m: Option<&Manifest>) -> Result<PathBuf> {
        self.out
            .clone()
            .or_else(|| m.and_then(|m| m.out.clone()))
            .ok_or_else(|| Error::invalid("no output directory: pass --out or set LRTD_OUT"))
    }
}

fn write_echo(m: &Manifest, out: &Path) -> Result<()> {
    write_json(&out.join("manifest.json"), m)
}

pub fn gen(ctx: &Context, spec: Option<&Path>) -> Result<()> {
    let mut spec: SyntheticSpec = match spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let out = ctx.out_dir(None)?;
    let (ds, f, a) = gen_synthetic(&spec, &out)?;
    write_json(&out.join("spec.json"), &spec)?;
    eprintln!("{}", ds.summary());
    eprintln!("wrote {} and {}", f.display(), a.display());
    Ok(())
}

pub fn al(ctx: &Context) -> Result<()> {
    let m = ctx.manifest()?;
    let out = ctx.out_dir(Some(&m))?;
    let ds = m.dataset()?;
    write_echo(&m, &out)?;
    let records = run_experiment(&ds, &m.split, &m.experiment(), m.seed, &out)?;
    for r in &records {
        eprintln!(
            "round {} fraction {} labeled {}/{} acc {:.4} ± {:.4}",
            r.round, r.fraction, r.labeled, r.total, r.metrics.acc.mean, r.metrics.acc.std
        );
    }
    Ok(())
}

pub fn compare(ctx: &Context) -> Result<()> {
    let m = ctx.manifest()?;
    if m.strategies.len() < 2 {
        return Err(Error::invalid(
            "manifest field `strategies`: compare needs at least two",
        ));
    }
    let out = ctx.out_dir(Some(&m))?;
    let ds = m.dataset()?;
    write_echo(&m, &out)?;
    let runs = run_comparison(&ds, &m.split, &m.experiment(), &m.strategies, m.seed, &out)?;
    for (name, records) in &runs {
        let last = records.last().expect("at least one round");
        eprintln!(
            "{name}: {} rounds, final acc {:.4}",
            records.len(),
            last.metrics.acc.mean
        );
    }
    eprintln!("wrote {}", out.join("report.txt").display());
    Ok(())
}

pub fn eval(ctx: &Context, predictions: &Path) -> Result<()> {
    let text = fs::read_to_string(predictions).map_err(|e| Error::io(format!("read {}", predictions.display()), e))?;
    let per_video = read_predictions_tsv(&text, predictions)?
        .into_iter()
        .map(|v| Ok((v.video_id, eval_video(&v.gt, &v.pred)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::new(per_video)?;
    let out = ctx.out_dir(None)?;
    write_json(&out.join("metrics.json"), &report)?;
    eprintln!(
        "{} videos, acc {:.4} ± {:.4}",
        report.aggregate.videos, report.aggregate.acc.mean, report.aggregate.acc.std
    );
    Ok(())
}

fn load_model(path: &Path, ds: &Dataset) -> Result<ModelParams> {
    let model = read_checkpoint(path)?;
    let c = model.config();
    if c.input_dim != ds.feature_dim || c.num_phases != ds.num_phases {
        return Err(Error::invalid(format!(
            "checkpoint expects {} features and {} phases, dataset has {} and {}",
            c.input_dim, c.num_phases, ds.feature_dim, ds.num_phases
        )));
    }
    Ok(model)
}

fn read_clip_list(path: &Path) -> Result<Vec<ClipId>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    let mut lines = text.lines();
    if lines.next() != Some("clip_id") {
        return Err(Error::invalid(format!(
            "{}: expected a `clip_id` header",
            path.display()
        )));
    }
    lines.filter(|l| !l.is_empty()).map(str::parse).collect()
}

pub struct ScoreArgs<'a> {
    pub checkpoint: &'a Path,
    pub strategy: Option<Strategy>,
    pub round: usize,
    pub labeled: &'a [PathBuf],
}

/// Scores the unlabeled train clips and marks the batch the loop would pick
/// at `round`. The labeled set is the union of the `labeled` clip lists, or
/// the seeded initial pool when none are given.
pub fn score(ctx: &Context, args: &ScoreArgs) -> Result<()> {
    let m = ctx.manifest()?;
    let out = ctx.out_dir(Some(&m))?;
    let ds = m.dataset()?;
    let model = load_model(args.checkpoint, &ds)?;
    let catalog = ClipCatalog::build(&ds, &m.split.train, model.config().clip_len)?;
    let ids: Vec<ClipId> = catalog.ids().cloned().collect();
    let pool = if args.labeled.is_empty() {
        init_pool(&ids, m.init_fraction, m.seed)?
    } else {
        let mut labeled = BTreeSet::new();
        for p in args.labeled {
            for id in read_clip_list(p)? {
                if catalog.get(&id).is_none() {
                    return Err(Error::invalid(format!(
                        "{}: clip {id} is not a train clip",
                        p.display()
                    )));
                }
                labeled.insert(id);
            }
        }
        let unlabeled = ids.iter().filter(|id| !labeled.contains(*id)).cloned().collect();
        PoolState::new(labeled, unlabeled)?
    };
    let mut cfg = m.experiment();
    if let Some(s) = args.strategy {
        cfg.selection.strategy = s;
    }
    let next = cfg.target_fraction(args.round + 1);
    let n_c = ((next * pool.total() as f64).round() as usize)
        .saturating_sub(pool.labeled().len())
        .min(pool.unlabeled().len());
    let scores = score_pool(&model, &ds, &catalog, &pool, &cfg.selection, m.seed, args.round)?;
    let chosen = select_batch(&pool, &scores.scores, n_c)?;
    let mut buf = Vec::new();
    write_scores_tsv(&mut buf, args.round, &scores.scores, &chosen).expect("in-memory write");
    write_file(&out.join("scores.tsv"), &buf)?;
    eprintln!(
        "scored {} clips with {}, selected {}",
        scores.scores.len(),
        cfg.selection.strategy,
        chosen.len()
    );
    Ok(())
}

/// Writes dependency matrices for the named clips, the clips of the named
/// videos, or every train clip when neither is given.
pub fn export_depmatrix(ctx: &Context, checkpoint: &Path, videos: &[String], clips: &[String]) -> Result<()> {
    let m = ctx.manifest()?;
    let out = ctx.out_dir(Some(&m))?;
    let ds = m.dataset()?;
    let model = load_model(checkpoint, &ds)?;
    let t = model.config().clip_len;
    let wanted: Vec<String> = if videos.is_empty() && clips.is_empty() {
        m.split.train.clone()
    } else {
        let mut v: Vec<String> = videos.to_vec();
        for c in clips {
            let id: ClipId = c.parse()?;
            if !v.contains(&id.video_id) {
                v.push(id.video_id);
            }
        }
        v
    };
    for v in &wanted {
        if ds.video_index(v).is_none() {
            return Err(Error::invalid(format!("unknown video {v}")));
        }
    }
    let catalog = ClipCatalog::build(&ds, &wanted, t)?;
    let whole: BTreeSet<&str> = if clips.is_empty() {
        wanted.iter().map(String::as_str).collect()
    } else {
        videos.iter().map(String::as_str).collect()
    };
    let mut selected: BTreeSet<ClipId> = catalog
        .ids()
        .filter(|id| whole.contains(id.video_id.as_str()))
        .cloned()
        .collect();
    for c in clips {
        selected.insert(c.parse()?);
    }
    let nl = model.nonlocal_params();
    let mut rows = Vec::with_capacity(selected.len());
    for id in &selected {
        let clip = catalog
            .get(id)
            .ok_or_else(|| Error::invalid(format!("clip {id} does not exist")))?;
        let hs = encode(&clip.features(&ds), &model)?;
        rows.push((id.to_string(), dependency_matrix(&hs.0, &nl, m.selection.mode)?));
    }
    let mut buf = Vec::new();
    write_matrices_tsv(&mut buf, &rows).expect("in-memory write");
    write_file(&out.join("depmatrix.tsv"), &buf)?;
    eprintln!("wrote {} matrices", rows.len());
    Ok(())
}
