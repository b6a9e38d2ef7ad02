use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use molkan::autodiff::opcheck::CHECKED_OPS;
use molkan::bench::{
    bench_kan_variants, run_experiment, split_stats, verify_suite, ExperimentConfig, KanBenchConfig, VerifyOptions,
    REPORT_FILE, SUMMARY_FILE,
};
use molkan::mpnn::{HeadKind, Host, UpdateKind};

#[derive(Parser)]
#[command(name = "molkan", version, about = "KAN-augmented message passing for molecular property prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write report.json, summary.csv and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        host: Option<Host>,
        #[arg(long)]
        update: Option<UpdateKind>,
        #[arg(long)]
        head: Option<HeadKind>,
        /// Output directory (overrides `output_path`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Median forward+backward time of one layer per KAN family.
    BenchKan {
        /// Input and output width.
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        /// RBF count for SKAN and FastKAN.
        #[arg(long = "M", default_value_t = 8)]
        m: usize,
        /// B-spline grid size.
        #[arg(long = "G", default_value_t = 8)]
        g: usize,
        /// B-spline order.
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Time with a constant input instead of one that needs a gradient.
        #[arg(long)]
        constant_input: bool,
        /// Also write the timing table as JSON to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Gradient checks and invariant suites; exits nonzero on any failure.
    Verify {
        /// CSVs whose scaffold splits are also checked.
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        /// Corrupt the backward rule of this op (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Scaffold group histogram and default split sizes of a CSV.
    SplitStats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "smiles")]
        smiles_column: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            config,
            seed,
            epochs,
            host,
            update,
            head,
            output,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.host = host.unwrap_or(cfg.host);
            cfg.update = update.unwrap_or(cfg.update);
            cfg.head = head.unwrap_or(cfg.head);
            if let Some(o) = output {
                cfg.output_path = o;
            }
            train(&cfg)
        }
        Command::BenchKan {
            n,
            batch,
            m,
            g,
            k,
            repeats,
            seed,
            constant_input,
            output,
        } => {
            let cfg = KanBenchConfig {
                n_in: n,
                n_out: n,
                batch,
                num_rbfs: m,
                grid_size: g,
                spline_order: k,
                repeats,
                seed,
                input_grad: !constant_input,
            };
            let rows = bench_kan_variants(&cfg)?;
            println!(
                "n={n} batch={batch} M={m} G={g} k={k} repeats={repeats} input_grad={} (3 warm-up calls excluded)",
                cfg.input_grad
            );
            println!("{:<12} {:>10} {:>14} {:>12} {:>12}", "family", "params", "median_ms", "min_ms", "max_ms");
            for r in &rows {
                println!(
                    "{:<12} {:>10} {:>14.4} {:>12.4} {:>12.4}",
                    r.family.as_str(),
                    r.parameter_count,
                    r.median_seconds * 1e3,
                    r.min_seconds * 1e3,
                    r.max_seconds * 1e3
                );
            }
            if let Some(path) = output {
                let json = serde_json::json!({ "config": cfg, "timings": rows });
                std::fs::write(&path, serde_json::to_string_pretty(&json)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            datasets,
            inject_fault,
            seed,
        } => {
            let fault = match inject_fault {
                Some(name) => match CHECKED_OPS.iter().find(|k| k.name() == name) {
                    Some(&k) => Some(k),
                    None => bail!("unknown op {name:?}"),
                },
                None => None,
            };
            let opts = VerifyOptions {
                fault,
                split_datasets: datasets,
                seed,
                ..VerifyOptions::default()
            };
            let started = std::time::Instant::now();
            let report = verify_suite(&opts);
            for c in &report.checks {
                println!("{} {:<40} {} ({:.2}s)", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail, c.seconds);
            }
            let failed = report.failures().count();
            println!(
                "{} checks, {failed} failed, {:.1}s total",
                report.checks.len(),
                started.elapsed().as_secs_f64()
            );
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::SplitStats { dataset, smiles_column } => {
            let s = split_stats(&dataset, &smiles_column)?;
            println!("rows {}  molecules {}  skipped {}", s.rows_read, s.molecules, s.skipped);
            println!("scaffolds {}  acyclic molecules {}  largest group {}", s.scaffolds, s.acyclic, s.largest_group);
            println!("group size    groups");
            for (lo, hi, count) in &s.histogram {
                let range = if lo == hi { lo.to_string() } else { format!("{lo}-{hi}") };
                println!("{range:<12}  {count}");
            }
            let [tr, va, te] = s.split_sizes;
            let fallback = if s.split_fell_back { " (random fallback)" } else { "" };
            println!("scaffold split train/valid/test: {tr}/{va}/{te}{fallback}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn train(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let report = run_experiment(cfg).context("experiment failed")?;
    println!(
        "{}: {} molecules ({} skipped), metric {}",
        cfg.dataset_path.display(),
        report.parse_stats.molecules,
        report.parse_stats.skipped,
        report.summary.metric
    );
    for (r, t) in report.results.iter().zip(&report.timing) {
        match (&r.report, &r.error) {
            (Some(run), _) => println!(
                "seed {:>3}: test {} = {}  (epoch {} selected, {:.2}s/epoch, {} params)",
                r.seed,
                run.metric,
                fmt_opt(run.test_metric),
                run.selected_epoch,
                t.mean_epoch_seconds.unwrap_or(0.0),
                run.parameter_count
            ),
            (None, err) => println!("seed {:>3}: failed: {}", r.seed, err.as_deref().unwrap_or("unknown")),
        }
    }
    let s = &report.summary;
    println!(
        "{} over {} seed(s): {} ± {}{}",
        s.metric,
        s.completed,
        fmt_opt(s.mean),
        fmt_opt(s.std),
        if s.failed > 0 { format!("  ({} failed)", s.failed) } else { String::new() }
    );
    println!(
        "wrote {} and {} to {}",
        REPORT_FILE,
        SUMMARY_FILE,
        cfg.output_path.display()
    );
    Ok(if s.completed > 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}
