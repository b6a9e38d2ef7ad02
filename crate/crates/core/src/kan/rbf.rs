use rand::Rng;

use super::{uniform_init, KanConfig};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `m` centers evenly spaced over `[-range, range]`.
pub fn grid_centers(m: usize, range: f64) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..m)
            .map(|j| -range + 2.0 * range * j as f64 / (m - 1) as f64)
            .collect(),
    }
}

/// Distance between adjacent grid centers (the full width for a single center).
pub fn grid_spacing(m: usize, range: f64) -> f64 {
    if m > 1 {
        2.0 * range / (m - 1) as f64
    } else {
        2.0 * range
    }
}

/// RBF KAN layer over a fixed grid: centers and bandwidth are constants.
#[derive(Clone, Debug)]
pub struct FastKanLayer {
    pub n_in: usize,
    pub n_out: usize,
    centers: Tensor,
    log_bandwidth: Tensor,
    rbf_weight: ParamId,
    base_weight: ParamId,
}

impl FastKanLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        cfg: &KanConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let m = cfg.num_rbfs;
        if m == 0 {
            return Err(Error::contract("FastKAN needs at least one RBF"));
        }
        let bw = grid_spacing(m, cfg.grid_range);
        let rbf_weight = store.add(
            format!("{prefix}.rbf_weight"),
            uniform_init(rng, &[n_out, n_in * m], n_in, n_out),
        )?;
        let base_weight = store.add(
            format!("{prefix}.base_weight"),
            uniform_init(rng, &[n_out, n_in], n_in, n_out),
        )?;
        Ok(FastKanLayer {
            n_in,
            n_out,
            centers: Tensor::vector(grid_centers(m, cfg.grid_range)),
            log_bandwidth: Tensor::full(&[m], bw.ln()),
            rbf_weight,
            base_weight,
        })
    }

    pub fn num_rbfs(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        self.centers.data()
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.log_bandwidth.data().iter().map(|l| l.exp()).collect()
    }

    pub fn log_bandwidths(&self) -> &[f64] {
        self.log_bandwidth.data()
    }

    pub fn rbf_weight(&self) -> ParamId {
        self.rbf_weight
    }

    pub fn base_weight(&self) -> ParamId {
        self.base_weight
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.rbf_weight, self.base_weight]
    }

    pub fn parameter_count(&self) -> usize {
        self.n_in * self.n_out * self.num_rbfs() + self.n_in * self.n_out
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        super::check_input(tape, x, self.n_in)?;
        let c = tape.constant(self.centers.clone());
        let l = tape.constant(self.log_bandwidth.clone());
        rbf_forward(tape, store, x, c, l, self.rbf_weight, self.base_weight)
    }
}

/// SwallowKAN layer: RBF edge functions whose centers and bandwidths are
/// learned, shared by every edge of the layer.
///
/// Each edge computes `w_b·silu(x) + Σ_j w_r[j]·exp(-½((x − c_j)/bw_j)²)`.
/// Bandwidths are stored as logarithms so they stay strictly positive.
#[derive(Clone, Debug)]
pub struct SkanLayer {
    pub n_in: usize,
    pub n_out: usize,
    m: usize,
    centers: ParamId,
    log_bandwidth: ParamId,
    rbf_weight: ParamId,
    base_weight: ParamId,
}

impl SkanLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        cfg: &KanConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let m = cfg.num_rbfs;
        if m == 0 {
            return Err(Error::contract("SKAN needs at least one RBF"));
        }
        let bw = cfg.bandwidth.initial(m, cfg.grid_range);
        let centers = store.add(
            format!("{prefix}.centers"),
            Tensor::vector(grid_centers(m, cfg.grid_range)),
        )?;
        let log_bandwidth = store.add(
            format!("{prefix}.log_bandwidth"),
            Tensor::full(&[m], bw.ln()),
        )?;
        let rbf_weight = store.add(
            format!("{prefix}.rbf_weight"),
            uniform_init(rng, &[n_out, n_in * m], n_in, n_out),
        )?;
        let base_weight = store.add(
            format!("{prefix}.base_weight"),
            uniform_init(rng, &[n_out, n_in], n_in, n_out),
        )?;
        Ok(SkanLayer {
            n_in,
            n_out,
            m,
            centers,
            log_bandwidth,
            rbf_weight,
            base_weight,
        })
    }

    pub fn num_rbfs(&self) -> usize {
        self.m
    }

    pub fn centers(&self) -> ParamId {
        self.centers
    }

    pub fn log_bandwidth(&self) -> ParamId {
        self.log_bandwidth
    }

    pub fn rbf_weight(&self) -> ParamId {
        self.rbf_weight
    }

    pub fn base_weight(&self) -> ParamId {
        self.base_weight
    }

    pub fn bandwidths(&self, store: &ParamStore) -> Vec<f64> {
        store
            .value(self.log_bandwidth)
            .data()
            .iter()
            .map(|l| l.exp())
            .collect()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.centers,
            self.log_bandwidth,
            self.rbf_weight,
            self.base_weight,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.n_in * self.n_out * self.m + self.n_in * self.n_out + 2 * self.m
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        super::check_input(tape, x, self.n_in)?;
        let c = tape.param(store, self.centers);
        let l = tape.param(store, self.log_bandwidth);
        rbf_forward(tape, store, x, c, l, self.rbf_weight, self.base_weight)
    }
}

fn rbf_forward(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    centers: Var,
    log_bw: Var,
    rbf_weight: ParamId,
    base_weight: ParamId,
) -> Result<Var> {
    let phi = tape.rbf_expand(x, centers, log_bw)?;
    let wr = tape.param(store, rbf_weight);
    let rbf = tape.matmul_t(phi, wr, false, true)?;
    let wb = tape.param(store, base_weight);
    let act = tape.silu(x);
    let base = tape.matmul_t(act, wb, false, true)?;
    tape.add(base, rbf)
}
