use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::KanConfig;
use crate::mpnn::{GnnConfig, HeadKind, Host, UpdateKind};
use crate::training::{CsvOptions, SplitFractions, TaskKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Scaffold,
    Random,
}

/// One experiment: a dataset, a model, a training budget and the seeds to
/// repeat it over. Read from JSON; every field but `dataset_path` and
/// `task` has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_path: PathBuf,
    pub task: TaskKind,
    #[serde(default)]
    pub csv: CsvOptions,
    #[serde(default = "defaults::host")]
    pub host: Host,
    #[serde(default = "defaults::update")]
    pub update: UpdateKind,
    #[serde(default = "defaults::head")]
    pub head: HeadKind,
    #[serde(default = "defaults::depth")]
    pub depth: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    /// RBF count `M` for SKAN and FastKAN blocks.
    #[serde(default = "defaults::num_rbfs")]
    pub num_rbfs: usize,
    #[serde(default)]
    pub skan_in_aggregation: bool,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::split")]
    pub split: SplitKind,
    #[serde(default)]
    pub fractions: SplitFractions,
    /// Directory receiving the report, the summary CSV and checkpoints.
    #[serde(default = "defaults::output_path")]
    pub output_path: PathBuf,
    #[serde(default = "defaults::checkpoints")]
    pub save_checkpoints: bool,
}

mod defaults {
    use super::*;

    pub fn host() -> Host {
        Host::Gine
    }
    pub fn update() -> UpdateKind {
        UpdateKind::Skan
    }
    pub fn head() -> HeadKind {
        HeadKind::Mlp
    }
    pub fn depth() -> usize {
        2
    }
    pub fn hidden() -> usize {
        256
    }
    pub fn num_rbfs() -> usize {
        8
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn epochs() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn seeds() -> Vec<u64> {
        vec![0, 1, 2, 3, 4]
    }
    pub fn split() -> SplitKind {
        SplitKind::Scaffold
    }
    pub fn output_path() -> PathBuf {
        PathBuf::from("runs/latest")
    }
    pub fn checkpoints() -> bool {
        true
    }
}

impl ExperimentConfig {
    /// A config with defaults for everything but the dataset.
    pub fn new(dataset_path: impl Into<PathBuf>, task: TaskKind) -> Self {
        let json = serde_json::json!({ "dataset_path": dataset_path.into(), "task": task });
        serde_json::from_value(json).expect("defaults deserialize")
    }

    /// Reads a JSON config. Relative paths inside it resolve against the
    /// current directory, like paths given on the command line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset_path.is_file() {
            return Err(Error::Config(format!(
                "dataset {} does not exist",
                self.dataset_path.display()
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.num_rbfs == 0 {
            return Err(Error::Config("epochs, batch_size and num_rbfs must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.gnn_config(1).validate()
    }

    pub fn gnn_config(&self, n_tasks: usize) -> GnnConfig {
        GnnConfig {
            host: self.host,
            depth: self.depth,
            hidden: self.hidden,
            update: self.update,
            head: self.head,
            n_tasks,
            skan_in_aggregation: self.skan_in_aggregation,
            kan: KanConfig {
                num_rbfs: self.num_rbfs,
                ..KanConfig::default()
            },
            ..GnnConfig::default()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
        }
    }
}
