use std::sync::Arc;

use rand::Rng;

use super::{uniform_init, KanConfig};
use crate::autodiff::{Basis1d, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// B-spline basis of order `k` on a uniform grid of `G` intervals over
/// `[-range, range]`, extended by `k` knots on each side.
#[derive(Clone, Debug)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    grid_size: usize,
    order: usize,
    spacing: f64,
}

impl BSplineBasis {
    pub fn uniform(grid_size: usize, order: usize, range: f64) -> Result<Self> {
        if grid_size == 0 || !(range > 0.0) {
            return Err(Error::contract("B-spline grid needs G >= 1 and range > 0"));
        }
        let spacing = 2.0 * range / grid_size as f64;
        let knots = (0..grid_size + 2 * order + 1)
            .map(|i| -range + (i as f64 - order as f64) * spacing)
            .collect();
        Ok(BSplineBasis {
            knots,
            grid_size,
            order,
            spacing,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Number of basis functions, `G + k`.
    pub fn len(&self) -> usize {
        self.grid_size + self.order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Inputs outside this interval are clamped to it.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.knots[self.order],
            self.knots[self.grid_size + self.order],
        )
    }

    /// Evaluates all `G + k` basis functions at `x`.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval(x, &mut out, None);
        out
    }

    /// Index of the knot span holding `x`, already clamped to the domain.
    fn span(&self, x: f64) -> usize {
        let k = self.order;
        let rel = ((x - self.knots[0]) / self.spacing).floor();
        let s = if rel.is_finite() && rel > 0.0 { rel as usize } else { 0 };
        s.clamp(k, self.grid_size + k - 1)
    }

    /// Non-zero basis values of degree `p` on span `s`: entry `r` is
    /// `B_{s-p+r, p}(x)`.
    fn local(&self, s: usize, x: f64, p: usize, n: &mut [f64]) {
        let t = &self.knots;
        let mut left = [0.0; 16];
        let mut right = [0.0; 16];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
    }
}

impl Basis1d for BSplineBasis {
    fn size(&self) -> usize {
        self.len()
    }

    fn eval(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>) {
        let k = self.order;
        debug_assert!(k < 15);
        let (lo, hi) = self.domain();
        let clamped = x < lo || x > hi;
        let xc = x.clamp(lo, hi);
        let s = self.span(xc);

        values.iter_mut().for_each(|v| *v = 0.0);
        let mut n = [0.0; 16];
        self.local(s, xc, k, &mut n);
        values[s - k..=s].copy_from_slice(&n[..=k]);

        if let Some(d) = derivs {
            d.iter_mut().for_each(|v| *v = 0.0);
            if clamped || k == 0 {
                return;
            }
            // uniform knots: B'_{b,k} = (B_{b,k-1} - B_{b+1,k-1}) / h
            let mut lower = [0.0; 16];
            self.local(s, xc, k - 1, &mut lower);
            for r in 0..=k {
                let a = if r >= 1 { lower[r - 1] } else { 0.0 };
                let b = if r < k { lower[r] } else { 0.0 };
                d[s - k + r] = (a - b) / self.spacing;
            }
        }
    }
}

/// KAN layer whose edge functions are `w_b·silu(x) + w_s·Σ_j c_j B_j(x)`.
#[derive(Clone, Debug)]
pub struct BSplineKanLayer {
    pub n_in: usize,
    pub n_out: usize,
    basis: Arc<BSplineBasis>,
    spline_coeffs: ParamId,
    spline_scale: ParamId,
    base_weight: ParamId,
}

impl BSplineKanLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        cfg: &KanConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let basis = BSplineBasis::uniform(cfg.grid_size, cfg.spline_order, cfg.grid_range)?;
        let k = basis.len();
        let spline_coeffs = store.add(
            format!("{prefix}.spline_coeffs"),
            uniform_init(rng, &[n_out, n_in, k], n_in, n_out),
        )?;
        let spline_scale = store.add(
            format!("{prefix}.spline_scale"),
            Tensor::full(&[n_out, n_in], 1.0),
        )?;
        let base_weight = store.add(
            format!("{prefix}.base_weight"),
            uniform_init(rng, &[n_out, n_in], n_in, n_out),
        )?;
        Ok(BSplineKanLayer {
            n_in,
            n_out,
            basis: Arc::new(basis),
            spline_coeffs,
            spline_scale,
            base_weight,
        })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.spline_coeffs, self.spline_scale, self.base_weight]
    }

    pub fn spline_coeffs(&self) -> ParamId {
        self.spline_coeffs
    }

    pub fn spline_scale(&self) -> ParamId {
        self.spline_scale
    }

    pub fn base_weight(&self) -> ParamId {
        self.base_weight
    }

    pub fn parameter_count(&self) -> usize {
        self.n_in * self.n_out * self.basis.len() + 2 * self.n_in * self.n_out
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        super::check_input(tape, x, self.n_in)?;
        let k = self.basis.len();
        let coeffs = tape.param(store, self.spline_coeffs);
        let scale = tape.param(store, self.spline_scale);
        let scale = tape.reshape(scale, &[self.n_out, self.n_in, 1])?;
        let w = tape.mul(coeffs, scale)?;
        let w = tape.reshape(w, &[self.n_out, self.n_in * k])?;
        let expanded = tape.basis_expand(x, self.basis.clone())?;
        let spline = tape.matmul_t(expanded, w, false, true)?;

        let wb = tape.param(store, self.base_weight);
        let act = tape.silu(x);
        let base = tape.matmul_t(act, wb, false, true)?;
        tape.add(base, spline)
    }
}
