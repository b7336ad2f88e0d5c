//! The run configuration: one JSON file with a section per command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specalign_core::retrieval::EvalOptions;
use specalign_core::shift::{DEFAULT_PROJECTIONS, DEFAULT_SEEDS};
use specalign_core::splits::{Part, SplitSpec, RANDOM_KEY};
use specalign_core::synthetic::SyntheticConfig;
use specalign_core::train::TrainConfig;

use crate::dataset::DatasetPaths;
use crate::error::{Error, Result};

/// File locations. Unset dataset paths default to conventional names in
/// `out_dir`; relative paths are resolved against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub spectra: Option<PathBuf>,
    pub molecules: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            spectra: None,
            molecules: None,
            meta: None,
            candidates: None,
            split: None,
            checkpoint: None,
            out_dir: PathBuf::from("."),
        }
    }
}

impl PathsConfig {
    pub fn dataset(&self) -> DatasetPaths {
        let d = DatasetPaths::in_dir(&self.out_dir);
        DatasetPaths {
            spectra: self.spectra.clone().unwrap_or(d.spectra),
            molecules: self.molecules.clone().unwrap_or(d.molecules),
            meta: self.meta.clone().unwrap_or(d.meta),
            candidates: self.candidates.clone().unwrap_or(d.candidates),
        }
    }

    pub fn split(&self) -> PathBuf {
        self.split
            .clone()
            .unwrap_or_else(|| self.out_dir.join("split.jsonl"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.msa1"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub key_name: String,
    pub fractions: (f64, f64, f64),
    pub seed: u64,
    /// Key audited for leakage; defaults to the split key, or "formula"
    /// for the random split.
    pub leakage_key: Option<String>,
}

impl Default for SplitSection {
    fn default() -> Self {
        let spec = SplitSpec::default();
        Self {
            key_name: spec.key_name,
            fractions: spec.fractions,
            seed: spec.seed,
            leakage_key: None,
        }
    }
}

impl SplitSection {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            key_name: self.key_name.clone(),
            fractions: self.fractions,
            seed: self.seed,
        }
    }

    pub fn leakage_key(&self) -> &str {
        match &self.leakage_key {
            Some(k) => k,
            None if self.key_name == RANDOM_KEY => "formula",
            None => &self.key_name,
        }
    }
}

/// Continue training an existing checkpoint, optionally on one adduct.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub init_checkpoint: Option<PathBuf>,
    pub adduct: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub filter_formula: bool,
    /// Evaluated part when a split file exists.
    pub part: Part,
}

impl Default for EvalSection {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            ks: o.ks,
            filter_formula: o.filter_formula,
            part: Part::Test,
        }
    }
}

impl EvalSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            ks: self.ks.clone(),
            filter_formula: self.filter_formula,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSection {
    pub n_projections: usize,
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for ShiftSection {
    fn default() -> Self {
        Self {
            n_projections: DEFAULT_PROJECTIONS,
            n_seeds: DEFAULT_SEEDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub gen: SyntheticConfig,
    pub split: SplitSection,
    pub train: TrainConfig,
    pub finetune: FinetuneSection,
    pub eval: EvalSection,
    pub shift: ShiftSection,
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every section; no command touches the file system before this passes.
    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, e: specalign_core::Error| Error::Config(format!("{section}: {e}"));
        self.gen.validate().map_err(|e| wrap("gen", e))?;
        self.split.spec().validate().map_err(|e| wrap("split", e))?;
        if self.finetune.adduct.is_some() && self.finetune.init_checkpoint.is_none() {
            return Err(Error::Config("finetune: adduct requires init_checkpoint".into()));
        }
        self.train.validate().map_err(|e| wrap("train", e))?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval: ks must be a non-empty list of positive ranks".into()));
        }
        if self.shift.n_projections == 0 || self.shift.n_seeds == 0 {
            return Err(Error::Config("shift: n_projections and n_seeds must be positive".into()));
        }
        if self.paths.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("paths: out_dir must be set".into()));
        }
        Ok(())
    }
}
