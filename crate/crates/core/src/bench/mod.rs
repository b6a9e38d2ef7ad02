//! Experiment orchestration, the KAN timing benchmark, the invariant suite,
//! dataset split statistics and a function-fitting sanity run.

mod config;
mod experiment;
mod fit;
mod kan_timing;
mod molgen;
mod split_stats;
mod verify;

#[cfg(test)]
mod tests;

pub use config::{ExperimentConfig, SplitKind};
pub use experiment::{
    checkpoint_path, environment_note, mean_std, run_experiment, ExperimentReport, SeedResult, SeedTiming, Summary,
    REPORT_FILE, SUMMARY_FILE,
};
pub use fit::{fit_function, target_function, FitConfig, FitReport};
pub use kan_timing::{bench_kan_variants, median, KanBenchConfig, KanTiming, MIN_REPEATS, WARMUP_CALLS};
pub use molgen::random_smiles;
pub use split_stats::{scaffold_keys_from_csv, split_stats, stats_for_keys, SplitStats};
pub use verify::{
    auc_pairwise, check_scaffold_split, closed_form_parameters, verify_suite, CheckOutcome, VerifyOptions,
    VerifyReport, AUC_TOL, GRAD_STEP, GRAD_TOL, INVARIANCE_TOL, PARAMETER_GRID,
};
