//! Experiment manifest: one JSON file naming the data, the split and every
//! configuration block. Relative paths resolve against the manifest's
//! directory; the echoed copy has every default filled in and absolute paths.

use std::fs;
use std::path::{Path, PathBuf};

use lrtd_core::alloop::{ExperimentConfig, Split, StopRule, TrainConfig};
use lrtd_core::backbone::EncoderConfig;
use lrtd_core::datamodel::{generate, load_dataset, Dataset, SyntheticSpec};
use lrtd_core::selector::{SelectionConfig, Strategy};
use lrtd_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub features: PathBuf,
    pub annotations: PathBuf,
    pub num_phases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetFiles>,
    /// Generate the data in memory instead of reading files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub split: Split,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default = "default_init_fraction")]
    pub init_fraction: f64,
    /// Strategies run by `compare`.
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_init_fraction() -> f64 {
    ExperimentConfig::default().init_fraction
}

/// Parses JSON, naming the offending field on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        if field == "." {
            Error::invalid(format!("{}: {inner}", path.display()))
        } else {
            Error::invalid(format!("{}: field `{field}`: {inner}", path.display()))
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    parse_json(&text, path)
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Manifest {
    /// Reads the manifest and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Manifest = read_json(path)?;
        let cwd = std::env::current_dir().map_err(|e| Error::io("current directory", e))?;
        let dir = absolute(&cwd, path.parent().unwrap_or(Path::new("")));
        if let Some(d) = &mut m.dataset {
            d.features = absolute(&dir, &d.features);
            d.annotations = absolute(&dir, &d.annotations);
        }
        if let Some(out) = &mut m.out {
            *out = absolute(&dir, out);
        }
        match (&m.dataset, &m.synthetic) {
            (Some(_), Some(_)) => Err(Error::invalid("manifest names both `dataset` and `synthetic`")),
            (None, None) => Err(Error::invalid("manifest needs `dataset` or `synthetic`")),
            _ => Ok(m),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            encoder: self.encoder.clone(),
            train: self.train.clone(),
            selection: self.selection.clone(),
            stop: self.stop.clone(),
            init_fraction: self.init_fraction,
        }
    }

    /// Loads or generates the data and checks the split against it.
    pub fn dataset(&self) -> Result<Dataset> {
        let ds = match (&self.dataset, &self.synthetic) {
            (Some(d), _) => load_dataset(&d.features, &d.annotations, d.num_phases)?,
            (None, Some(spec)) => generate(spec)?,
            (None, None) => return Err(Error::invalid("manifest needs `dataset` or `synthetic`")),
        };
        self.split.validate(&ds)?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment().validate()
    }
}
