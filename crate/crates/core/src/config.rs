//! Run configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::base_learners::{import_external_encodings, EncodingTable, LearnerConfig};
use crate::data::{read_dataset, Dataset, SchemaSpec, SplitSpec};
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::evaluation::ExperimentConfig;
use crate::metafeatures::{VariantConfig, VariantKind};
use crate::synthgen::{self, SynthConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    /// Label whose ratings define alignment; defaults to the target.
    pub label: Option<String>,
    /// Annotations scoring at most `tau` count as aligned.
    pub tau: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig { label: None, tau: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Annotation table (`.csv` or `.jsonl`); mutually exclusive with `[synth]`.
    pub dataset: Option<PathBuf>,
    pub target: Option<String>,
    pub aux: Option<Vec<String>>,
    /// Imported raw encodings (`text_id,label,p`) used instead of base learners.
    pub encodings: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variants: Vec<VariantKind>,
    pub seeds: Vec<u64>,
    pub split: [f64; 3],
    pub prior_weighting: bool,
    pub direct: bool,
    pub jobs: Option<usize>,
    pub ablation_sizes: Vec<usize>,
    pub learner: LearnerConfig,
    pub ensemble: EnsembleConfig,
    pub metafeatures: VariantConfig<f64>,
    pub cohort: CohortConfig,
    pub synth: Option<SynthConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        RunConfig {
            dataset: None,
            target: None,
            aux: None,
            encodings: None,
            out: None,
            variants: e.variants,
            seeds: e.seeds,
            split: e.split_ratios,
            prior_weighting: e.prior_weighting,
            direct: e.direct,
            jobs: None,
            ablation_sizes: Vec::new(),
            learner: e.learner,
            ensemble: e.ensemble,
            metafeatures: e.variant_config,
            cohort: CohortConfig::default(),
            synth: None,
        }
    }
}

/// Reads, resolves and validates a config file. Relative paths are taken
/// relative to the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for p in [&mut cfg.dataset, &mut cfg.encodings, &mut cfg.out].into_iter().flatten() {
        if p.is_relative() {
            *p = base_dir.join(&*p);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("set either `dataset` or `[synth]`, not both".into())),
            (None, None) => return Err(Error::Config("one of `dataset` or `[synth]` is required".into())),
            (Some(p), None) => {
                if self.target.is_none() {
                    return Err(Error::Config("`target` is required with `dataset`".into()));
                }
                if !p.exists() {
                    return Err(Error::Config(format!("dataset: {} does not exist", p.display())));
                }
            }
            (None, Some(s)) => {
                s.validate().map_err(|e| Error::Config(format!("synth: {e}")))?;
                if self.target.as_ref().is_some_and(|t| t != &s.target) {
                    return Err(Error::Config(format!("target: must match synth.target '{}'", s.target)));
                }
            }
        }
        if let Some(p) = &self.encodings {
            if !p.exists() {
                return Err(Error::Config(format!("encodings: {} does not exist", p.display())));
            }
        }
        if self.variants.is_empty() {
            return Err(Error::Config("variants: at least one variant is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        SplitSpec { ratios: self.split, seed: 0 }.validate().map_err(|e| Error::Config(format!("split: {e}")))?;
        if self.ablation_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("ablation_sizes: must be strictly increasing".into()));
        }
        if !(0.0..=1.0).contains(&self.cohort.tau) {
            return Err(Error::Config("cohort.tau: must lie in [0,1]".into()));
        }
        self.learner.validate().map_err(|e| Error::Config(format!("learner: {e}")))?;
        self.ensemble.train.validate().map_err(|e| Error::Config(format!("ensemble: {e}")))?;
        self.metafeatures.validate().map_err(|e| Error::Config(format!("metafeatures: {e}")))?;
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs: must be >= 1".into()));
        }
        Ok(())
    }

    /// The effective configuration as TOML, with every default filled in.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(format!("config serialization failed: {e}")))
    }

    pub fn target_name(&self) -> &str {
        match (&self.target, &self.synth) {
            (Some(t), _) => t,
            (None, Some(s)) => &s.target,
            (None, None) => "",
        }
    }

    /// Reads the dataset, or generates it from `[synth]`.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match (&self.dataset, &self.synth) {
            (Some(path), _) => {
                let spec = SchemaSpec { target: self.target_name().to_string(), aux: self.aux.clone() };
                read_dataset(path, &spec)
            }
            (None, Some(s)) => Ok(synthgen::generate(s)?.dataset),
            (None, None) => Err(Error::Config("no dataset configured".into())),
        }
    }

    pub fn load_encodings(&self) -> Result<Option<EncodingTable<f64>>> {
        self.encodings.as_ref().map(import_external_encodings).transpose()
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            variants: self.variants.clone(),
            seeds: self.seeds.clone(),
            split_ratios: self.split,
            prior_weighting: self.prior_weighting,
            direct: self.direct,
            learner: self.learner.clone(),
            ensemble: self.ensemble.clone(),
            variant_config: self.metafeatures.clone(),
            jobs: self.jobs,
        }
    }

    /// Replaces the seeds with consecutive values starting at `seed`,
    /// keeping their count, and reseeds the generator.
    pub fn override_seed(&mut self, seed: u64) {
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (seed..seed + n).collect();
        if let Some(s) = &mut self.synth {
            s.seed = seed;
        }
    }
}
