use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::error::Result;
use crate::kan::{KanConfig, KanFamily, KanNetwork};
use crate::training::AdamState;

/// Full-batch regression of `exp(sin(πx₁) + x₂²)` on `[-1, 1]²` with a
/// small KAN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub family: KanFamily,
    pub widths: Vec<usize>,
    pub kan: KanConfig,
    pub points: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            family: KanFamily::Skan,
            widths: vec![2, 5, 1],
            kan: KanConfig {
                num_rbfs: 8,
                grid_range: 1.5,
                ..KanConfig::default()
            },
            points: 1000,
            steps: 2000,
            lr: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_rmse: f64,
    /// Training RMSE after the last step.
    pub final_rmse: f64,
    pub best_rmse: f64,
    pub parameter_count: usize,
}

pub fn target_function(x1: f64, x2: f64) -> f64 {
    ((PI * x1).sin() + x2 * x2).exp()
}

pub fn fit_function(cfg: &FitConfig) -> Result<FitReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut xs = Vec::with_capacity(cfg.points * 2);
    let mut ys = Vec::with_capacity(cfg.points);
    for _ in 0..cfg.points {
        let (a, b) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        xs.extend([a, b]);
        ys.push(target_function(a, b));
    }
    let x = Tensor::new(vec![cfg.points, 2], xs)?;
    let y = Arc::new(Tensor::new(vec![cfg.points, 1], ys)?);
    let mask = Arc::new(Tensor::full(&[cfg.points, 1], 1.0));

    let mut store = ParamStore::new();
    let net = KanNetwork::init(&mut store, "fit", cfg.family, &cfg.widths, &cfg.kan, &mut rng)?;
    let mut adam = AdamState::new(&store, cfg.lr);
    let mse = |tape: &mut Tape, store: &ParamStore| -> Result<_> {
        let xv = tape.constant(x.clone());
        let pred = net.forward(tape, store, xv)?;
        tape.masked_mse(pred, y.clone(), mask.clone())
    };

    let mut initial_rmse = f64::NAN;
    let mut best_rmse = f64::INFINITY;
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let loss = mse(&mut tape, &store)?;
        let rmse = tape.value(loss).item().sqrt();
        if step == 0 {
            initial_rmse = rmse;
        }
        best_rmse = best_rmse.min(rmse);
        let grads = tape.backward(loss)?;
        store.accumulate(&tape, &grads);
        adam.step(&mut store);
    }
    let mut tape = Tape::new();
    let loss = mse(&mut tape, &store)?;
    let final_rmse = tape.value(loss).item().sqrt();
    Ok(FitReport {
        initial_rmse,
        final_rmse,
        best_rmse: best_rmse.min(final_rmse),
        parameter_count: net.parameter_count(),
    })
}
