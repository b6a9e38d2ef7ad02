//! Optimization, losses, metrics, scaffold splitting and the epoch loop.

mod adam;
mod data;
mod metrics;
mod split;
mod train;

#[cfg(test)]
mod tests;

pub use adam::AdamState;
pub use data::{load_csv_dataset, CsvOptions, Dataset, Molecule, ParseStats, TaskKind};
pub use metrics::{mae_tasks, mean_defined, roc_auc, roc_auc_tasks, AucReport, Normalizer};
pub use split::{
    random_split, scaffold_groups, scaffold_split, ScaffoldSplit, SplitFractions, SplitIndices,
};
pub use train::{evaluate, improves, metric_name, predict, train_loop, RunReport, TrainConfig};
