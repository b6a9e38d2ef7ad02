use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SplitKind};
use crate::autodiff::ParamStore;
use crate::error::Result;
use crate::mpnn::{save_checkpoint, GnnModel};
use crate::training::{
    load_csv_dataset, metric_name, random_split, scaffold_split, train_loop, Dataset, ParseStats, RunReport,
    SplitIndices,
};

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub split_sizes: [usize; 3],
    pub split_fell_back: bool,
    /// Training report without wall-clock fields; absent when the run failed.
    pub report: Option<RunReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric: String,
    pub completed: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two completed seeds.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub epoch_seconds: Vec<f64>,
    pub mean_epoch_seconds: Option<f64>,
}

/// Everything `run_experiment` writes to `report.json`. `results` and
/// `summary` are deterministic given the config; `timing` and
/// `environment` are not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub environment: String,
    pub parse_stats: ParseStats,
    pub results: Vec<SeedResult>,
    pub summary: Summary,
    pub timing: Vec<SeedTiming>,
}

impl ExperimentReport {
    /// Canonical JSON of the deterministic sections.
    pub fn metrics_json(&self) -> String {
        let metrics = serde_json::json!({ "results": self.results, "summary": self.summary });
        serde_json::to_string_pretty(&metrics).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn parameter_count(&self) -> Option<usize> {
        self.results.iter().find_map(|r| r.report.as_ref().map(|r| r.parameter_count))
    }
}

pub fn environment_note() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}, {} logical cpu(s), molkan {}, single-threaded training",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus,
        env!("CARGO_PKG_VERSION")
    )
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

fn split_for(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<(SplitIndices, bool)> {
    Ok(match cfg.split {
        SplitKind::Scaffold => {
            let s = scaffold_split(&data.scaffold_keys(), cfg.fractions, seed)?;
            (s.indices, s.fell_back)
        }
        SplitKind::Random => (random_split(data.len(), cfg.fractions, seed)?, false),
    })
}

fn run_seed(cfg: &ExperimentConfig, data: &Dataset, split: &SplitIndices, seed: u64) -> Result<(RunReport, ParamStore)> {
    let mut store = ParamStore::new();
    let model = GnnModel::init(&mut store, &cfg.gnn_config(data.n_tasks()), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let report = train_loop(&model, &mut store, data, split, &cfg.train_config(seed))?;
    Ok((report, store))
}

/// Loads the dataset, trains once per seed, aggregates the test metric and
/// writes `report.json`, `summary.csv` and per-seed checkpoints into
/// `cfg.output_path`. A failing seed is recorded and skipped; the summary
/// covers the seeds that completed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (data, parse_stats) = load_csv_dataset(&cfg.dataset_path, cfg.task, &cfg.csv)?;
    log::info!(
        "{}: {} molecules, {} tasks, {} rows skipped",
        cfg.dataset_path.display(),
        data.len(),
        data.n_tasks(),
        parse_stats.skipped
    );
    fs::create_dir_all(&cfg.output_path)?;

    let mut results = Vec::new();
    let mut timing = Vec::new();
    for &seed in &cfg.seeds {
        let (split, fell_back) = split_for(cfg, &data, seed)?;
        let mut result = SeedResult {
            seed,
            split_sizes: split.sizes(),
            split_fell_back: fell_back,
            report: None,
            error: None,
        };
        let mut seconds = Vec::new();
        match run_seed(cfg, &data, &split, seed) {
            Ok((report, store)) => {
                log::info!("seed {seed}: test {} {:?}", report.metric, report.test_metric);
                if cfg.save_checkpoints {
                    save_checkpoint(&store, &checkpoint_path(&cfg.output_path, seed))?;
                }
                seconds = report.epoch_seconds.clone();
                result.report = Some(report.metrics_only());
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                result.error = Some(e.to_string());
            }
        }
        let (mean_epoch_seconds, _) = mean_std(&seconds);
        timing.push(SeedTiming {
            seed,
            epoch_seconds: seconds,
            mean_epoch_seconds,
        });
        results.push(result);
    }

    let tests: Vec<f64> = results
        .iter()
        .filter_map(|r| r.report.as_ref().and_then(|r| r.test_metric))
        .collect();
    let (mean, std) = mean_std(&tests);
    let completed = results.iter().filter(|r| r.report.is_some()).count();
    let report = ExperimentReport {
        config: cfg.clone(),
        environment: environment_note(),
        parse_stats,
        summary: Summary {
            metric: metric_name(cfg.task).to_string(),
            completed,
            failed: results.len() - completed,
            mean,
            std,
        },
        results,
        timing,
    };
    write_outputs(&report, &cfg.output_path)?;
    Ok(report)
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed{seed}.ckpt"))
}

fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::write(dir.join(REPORT_FILE), report.to_json())?;
    let mut w = csv::Writer::from_path(dir.join(SUMMARY_FILE))?;
    w.write_record(["seed", "test_metric", "epoch_time_s", "param_count"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (r, t) in report.results.iter().zip(&report.timing) {
        let run = r.report.as_ref();
        w.write_record([
            r.seed.to_string(),
            opt(run.and_then(|r| r.test_metric)),
            opt(t.mean_epoch_seconds),
            run.map(|r| r.parameter_count.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
