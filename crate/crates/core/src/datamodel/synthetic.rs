//! Synthetic phase-sequence generator.
//!
//! Each video walks the phase order with sampled durations. A latent state
//! follows `s_t = ρ·s_{t−1} + (1−ρ)·μ_phase + ε`; the emitted feature is the
//! state, except that with probability `p_noise` a frame is replaced by a
//! low-energy outlier draw (a stand-in for blurred or corrupted frames). The
//! latent chain is not disturbed by outliers.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{write_dataset, Dataset, FrameRecord, Video};
use crate::error::{Error, Result};
use crate::seed::{rng_for, STREAM_SYNTHETIC};

pub const FEATURE_FILE: &str = "features.bin";
pub const ANNOTATION_FILE: &str = "annotations.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub feature_dim: usize,
    pub num_phases: usize,
    /// Explicit phase means; generated from the seed when absent.
    pub prototypes: Option<Vec<Vec<f64>>>,
    /// Norm of each generated prototype.
    pub prototype_norm: f64,
    /// Probability that a phase after the first is skipped in a video.
    pub skip_prob: f64,
    pub rho: f64,
    /// Standard deviation of the per-frame innovation ε.
    pub frame_noise: f64,
    pub p_noise: f64,
    /// Standard deviation of outlier frames.
    pub outlier_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_videos: 20,
            min_frames: 150,
            max_frames: 250,
            feature_dim: 16,
            num_phases: 7,
            prototypes: None,
            prototype_norm: 3.0,
            skip_prob: 0.0,
            rho: 0.7,
            frame_noise: 0.5,
            p_noise: 0.03,
            outlier_scale: 0.3,
            seed: 0,
        }
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::invalid(format!("synthetic spec field `{field}`: {msg}"))
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 {
            return Err(field_err("num_videos", "must be positive"));
        }
        if self.num_phases == 0 {
            return Err(field_err("num_phases", "must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(field_err("feature_dim", "must be positive"));
        }
        if self.min_frames < self.num_phases {
            return Err(field_err("min_frames", "must be at least num_phases"));
        }
        if self.max_frames < self.min_frames {
            return Err(field_err("max_frames", "must be at least min_frames"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(field_err("rho", format!("must lie in [0, 1), got {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.p_noise) {
            return Err(field_err(
                "p_noise",
                format!("must lie in [0, 1), got {}", self.p_noise),
            ));
        }
        if !(0.0..1.0).contains(&self.skip_prob) {
            return Err(field_err("skip_prob", "must lie in [0, 1)"));
        }
        for (name, v) in [
            ("prototype_norm", self.prototype_norm),
            ("frame_noise", self.frame_noise),
            ("outlier_scale", self.outlier_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(field_err(name, "must be finite and nonnegative"));
            }
        }
        if let Some(protos) = &self.prototypes {
            if protos.len() != self.num_phases {
                return Err(field_err("prototypes", "need one prototype per phase"));
            }
            if protos
                .iter()
                .any(|p| p.len() != self.feature_dim || p.iter().any(|v| !v.is_finite()))
            {
                return Err(field_err(
                    "prototypes",
                    "each prototype must have feature_dim finite values",
                ));
            }
        }
        Ok(())
    }

    pub fn resolved_prototypes(&self) -> Vec<Vec<f64>> {
        if let Some(p) = &self.prototypes {
            return p.clone();
        }
        let mut rng = rng_for(self.seed, &[STREAM_SYNTHETIC, u64::MAX]);
        (0..self.num_phases)
            .map(|_| {
                let v: Vec<f64> = (0..self.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| x / norm * self.prototype_norm).collect()
            })
            .collect()
    }
}

fn phase_durations<R: Rng>(spec: &SyntheticSpec, frames: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let phases: Vec<usize> = (0..spec.num_phases)
        .filter(|&p| p == 0 || !rng.random_bool(spec.skip_prob))
        .collect();
    let weights: Vec<f64> = phases.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let spare = frames - phases.len();
    let mut lens: Vec<usize> = weights
        .iter()
        .map(|w| 1 + (spare as f64 * w / total).floor() as usize)
        .collect();
    let assigned: usize = lens.iter().sum();
    *lens.last_mut().expect("at least one phase") += frames - assigned;
    phases.into_iter().zip(lens).collect()
}

/// Builds the dataset in memory. Features are rounded to `f32` precision so
/// the in-memory copy equals what a file round trip yields.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let protos = spec.resolved_prototypes();
    let dim = spec.feature_dim;
    let mut videos = Vec::with_capacity(spec.num_videos);
    for v in 0..spec.num_videos {
        let mut rng = rng_for(spec.seed, &[STREAM_SYNTHETIC, v as u64]);
        let frames_n = rng.random_range(spec.min_frames..=spec.max_frames);
        let schedule = phase_durations(spec, frames_n, &mut rng);
        let mut state = protos[schedule[0].0].clone();
        let mut frames = Vec::with_capacity(frames_n);
        for (phase, len) in schedule {
            let mu = &protos[phase];
            for _ in 0..len {
                for d in 0..dim {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    state[d] = spec.rho * state[d] + (1.0 - spec.rho) * mu[d] + spec.frame_noise * eps;
                }
                let outlier = spec.p_noise > 0.0 && rng.random_bool(spec.p_noise);
                let feature: Vec<f64> = if outlier {
                    (0..dim)
                        .map(|_| {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            f64::from((spec.outlier_scale * e) as f32)
                        })
                        .collect()
                } else {
                    state.iter().map(|&x| f64::from(x as f32)).collect()
                };
                frames.push(FrameRecord {
                    frame_index: frames.len(),
                    feature,
                    phase,
                    outlier,
                });
            }
        }
        videos.push(Video {
            id: format!("video{:02}", v + 1),
            frames,
        });
    }
    let ds = Dataset {
        videos,
        feature_dim: dim,
        num_phases: spec.num_phases,
    };
    ds.validate()?;
    Ok(ds)
}

/// Generates the dataset and writes `features.bin` and `annotations.tsv`
/// into `out_dir`.
pub fn gen_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<(Dataset, PathBuf, PathBuf)> {
    let ds = generate(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("create {}", out_dir.display()), e))?;
    let f = out_dir.join(FEATURE_FILE);
    let a = out_dir.join(ANNOTATION_FILE);
    write_dataset(&ds, &f, &a)?;
    Ok((ds, f, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::load_dataset;

    fn nearest(protos: &[Vec<f64>], x: &[f64]) -> usize {
        let dist = |p: &Vec<f64>| p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        (0..protos.len())
            .min_by(|&a, &b| dist(&protos[a]).total_cmp(&dist(&protos[b])))
            .unwrap()
    }

    #[test]
    fn far_prototypes_are_perfectly_separable() {
        let spec = SyntheticSpec {
            num_videos: 4,
            feature_dim: 8,
            rho: 0.0,
            p_noise: 0.0,
            frame_noise: 0.5,
            prototypes: Some(
                (0..7)
                    .map(|p| (0..8).map(|d| if d == p { 20.0 } else { 0.0 }).collect())
                    .collect(),
            ),
            ..SyntheticSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let protos = spec.resolved_prototypes();
        let frames: Vec<&FrameRecord> = ds.videos.iter().flat_map(|v| &v.frames).collect();
        let correct = frames
            .iter()
            .filter(|f| nearest(&protos, &f.feature) == f.phase)
            .count();
        assert_eq!(correct, frames.len());
        assert!(frames.iter().all(|f| !f.outlier));
    }

    #[test]
    fn phases_are_walked_in_order() {
        let ds = generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(ds.videos.len(), 20);
        for v in &ds.videos {
            assert!(v.len() >= 150 && v.len() <= 250);
            let phases = v.phases();
            assert_eq!(phases[0], 0);
            assert!(phases.windows(2).all(|w| w[1] >= w[0]));
            assert_eq!(*phases.last().unwrap(), 6);
        }
    }

    #[test]
    fn deterministic_bytes_and_round_trip() {
        let spec = SyntheticSpec {
            num_videos: 3,
            ..SyntheticSpec::default()
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (ds, f1, a1) = gen_synthetic(&spec, d1.path()).unwrap();
        let (_, f2, a2) = gen_synthetic(&spec, d2.path()).unwrap();
        assert_eq!(std::fs::read(&f1).unwrap(), std::fs::read(&f2).unwrap());
        assert_eq!(std::fs::read(&a1).unwrap(), std::fs::read(&a2).unwrap());
        assert_eq!(load_dataset(&f1, &a1, 7).unwrap(), ds);
    }

    #[test]
    fn invalid_fields_are_named() {
        let bad = SyntheticSpec {
            rho: 1.0,
            ..SyntheticSpec::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("rho"));
        let bad = SyntheticSpec {
            p_noise: -0.1,
            ..SyntheticSpec::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("p_noise"));
    }
}
