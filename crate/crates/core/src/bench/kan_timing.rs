use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::kan::{enumerate_parameters, KanConfig, KanFamily, KanLayer};

pub const WARMUP_CALLS: usize = 3;
pub const MIN_REPEATS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanBenchConfig {
    pub n_in: usize,
    pub n_out: usize,
    pub batch: usize,
    /// RBF count for SKAN and FastKAN.
    pub num_rbfs: usize,
    pub grid_size: usize,
    pub spline_order: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Treat the input batch as requiring a gradient, as it does for every
    /// KAN block inside the GNN. When false, families whose basis has no
    /// learnable parameters skip their basis-gradient work entirely.
    pub input_grad: bool,
}

impl Default for KanBenchConfig {
    fn default() -> Self {
        KanBenchConfig {
            n_in: 64,
            n_out: 64,
            batch: 128,
            num_rbfs: 8,
            grid_size: 8,
            spline_order: 3,
            repeats: 20,
            seed: 0,
            input_grad: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KanTiming {
    pub family: KanFamily,
    /// Closed-form count reported by the layer.
    pub parameter_count: usize,
    /// Scalars actually allocated in the parameter store.
    pub enumerated_parameters: usize,
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub repeats: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Times one forward+backward pass of a single layer per KAN family on the
/// same random batch. Each family gets [`WARMUP_CALLS`] untimed calls, then
/// `repeats` timed ones; the median is reported. Timed calls are interleaved
/// across families so slow drift on the host affects all of them alike.
pub fn bench_kan_variants(cfg: &KanBenchConfig) -> Result<Vec<KanTiming>> {
    if cfg.n_in == 0 || cfg.n_out == 0 || cfg.batch == 0 {
        return Err(Error::Config("bench sizes must be positive".into()));
    }
    if cfg.repeats < MIN_REPEATS {
        return Err(Error::Config(format!("repeats must be at least {MIN_REPEATS}, got {}", cfg.repeats)));
    }
    let kan = KanConfig {
        num_rbfs: cfg.num_rbfs,
        grid_size: cfg.grid_size,
        spline_order: cfg.spline_order,
        ..KanConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = (0..cfg.batch * cfg.n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::new(vec![cfg.batch, cfg.n_in], data)?;

    let families = [KanFamily::Skan, KanFamily::Fastkan, KanFamily::BsplineKan];
    let mut setups = Vec::with_capacity(families.len());
    for family in families {
        let (mut store, layer) = KanLayer::standalone(family, cfg.n_in, cfg.n_out, &kan, cfg.seed)?;
        let input = store.add("input", x.clone())?;
        setups.push((store, layer, input));
    }
    let call = |store: &mut ParamStore, layer: &KanLayer, input: ParamId| -> Result<f64> {
        let started = Instant::now();
        let mut tape = Tape::new();
        let xv = if cfg.input_grad { tape.param(store, input) } else { tape.constant(x.clone()) };
        let y = layer.forward(&mut tape, store, xv)?;
        let loss = tape.sum(y);
        let grads = tape.backward(loss)?;
        store.accumulate(&tape, &grads);
        let elapsed = started.elapsed().as_secs_f64();
        store.zero_grads();
        Ok(elapsed)
    };
    for (store, layer, input) in &mut setups {
        for _ in 0..WARMUP_CALLS {
            call(store, layer, *input)?;
        }
    }
    let mut times = vec![Vec::with_capacity(cfg.repeats); setups.len()];
    for _ in 0..cfg.repeats {
        for ((store, layer, input), t) in setups.iter_mut().zip(&mut times) {
            t.push(call(store, layer, *input)?);
        }
    }
    setups
        .iter()
        .zip(times)
        .map(|((store, layer, _), mut times)| {
            let median_seconds = median(&mut times);
            Ok(KanTiming {
                family: layer.family(),
                parameter_count: layer.parameter_count(),
                enumerated_parameters: enumerate_parameters(store, &layer.param_ids()),
                median_seconds,
                min_seconds: times[0],
                max_seconds: times[times.len() - 1],
                repeats: cfg.repeats,
            })
        })
        .collect()
}
