//! Run configuration (TOML) with full defaulting.
//!
//! Relative paths inside a config file are resolved against the file's
//! directory. The fully resolved config is echoed to
//! `<output_dir>/resolved_config.toml` by every run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{builtin_arch, ArchSpec, Shape3};
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::nn::OptimizerConfig;
use crate::prune::PruneCriteria;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// `train`/`test` are `[images, labels]` IDX file pairs.
    Idx,
    /// `train`/`test` are lists of CIFAR binary batch files.
    Cifar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub format: DatasetFormat,
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Class-balanced training subset size per class; all samples when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    /// Defaults depend on the format (grayscale or CIFAR statistics).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

fn default_classes() -> usize {
    10
}

impl DatasetConfig {
    pub fn normalization(&self) -> Normalization {
        self.normalization.clone().unwrap_or_else(|| match self.format {
            DatasetFormat::Idx => Normalization::grayscale(),
            DatasetFormat::Cifar => Normalization::cifar10(),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.format == DatasetFormat::Idx && (self.train.len() != 2 || self.test.len() != 2) {
            return Err(Error::Config(
                "idx datasets need train = [images, labels] and test = [images, labels]".into(),
            ));
        }
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Config("dataset needs train and test files".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.train_per_class == Some(0) || self.test_per_class == Some(0) {
            return Err(Error::Config("per-class subset sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Either a built-in name or an architecture file; exactly one is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl ArchConfig {
    /// Builds or loads the architecture for inputs of shape `input`.
    pub fn resolve(&self, input: Shape3, num_classes: usize) -> Result<ArchSpec> {
        match (&self.name, &self.file) {
            (Some(name), None) => builtin_arch(name, input, num_classes),
            (None, Some(file)) => {
                let arch = ArchSpec::load(file)?;
                if arch.input() != input || arch.num_classes != num_classes {
                    return Err(Error::Config(format!(
                        "{}: architecture expects input {:?} and {} classes, dataset provides {:?} and {num_classes}",
                        file.display(),
                        arch.input_shape,
                        arch.num_classes,
                        [input.channels, input.height, input.width],
                    )));
                }
                Ok(arch)
            }
            _ => Err(Error::Config("arch needs exactly one of `name` or `file`".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Epoch cap per pruning stage; also the length of `train` runs.
    #[serde(default = "default_budget")]
    pub epochs_budget: usize,
    pub dataset: DatasetConfig,
    pub arch: ArchConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub criteria: PruneCriteria,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_budget() -> usize {
    30
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.dataset.train.iter_mut().for_each(fix);
        self.dataset.test.iter_mut().for_each(fix);
        if let Some(f) = &mut self.arch.file {
            fix(f);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.optimizer.validate()?;
        self.criteria.validate()?;
        if self.epochs_budget == 0 {
            return Err(Error::Config("epochs_budget must be >= 1".into()));
        }
        if self.arch.name.is_some() == self.arch.file.is_some() {
            return Err(Error::Config("arch needs exactly one of `name` or `file`".into()));
        }
        Ok(())
    }

    /// Copy with every default made explicit.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.dataset.normalization = Some(self.dataset.normalization());
        c
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }
}
