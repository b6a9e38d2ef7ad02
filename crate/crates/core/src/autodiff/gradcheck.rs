use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Outcome of comparing analytic gradients to central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Denominator floor for [`relative_error`]. Central differences at step
/// 1e-5 on losses of a few units through a deep graph carry up to ~1e-10 of
/// rounding noise, so a smaller floor would flag correct near-zero gradients.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks `∂f/∂p` for every entry of every parameter in `params` against
/// `(f(p+h) − f(p−h)) / 2h`. `f` must build a scalar on the tape it is given
/// and be deterministic.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    step: f64,
    tol: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    grad_check_on(store, params, step, tol, Tape::new, f)
}

/// Same as [`grad_check`] but the analytic pass runs on a caller-prepared
/// tape, so fixtures can inject backward faults.
pub fn grad_check_on<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    step: f64,
    tol: f64,
    make_tape: impl Fn() -> Tape,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let analytic = {
        let mut tape = make_tape();
        let root = f(&mut tape, store)?;
        let grads = tape.backward(root)?;
        store.zero_grads();
        store.accumulate(&tape, &grads);
        params
            .iter()
            .map(|&p| store.grad(p).clone())
            .collect::<Vec<_>>()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let root = f(&mut tape, store)?;
        Ok(tape.value(root).item())
    };
    compare(store, params, step, tol, analytic, eval)
}

fn compare(
    store: &mut ParamStore,
    params: &[ParamId],
    step: f64,
    tol: f64,
    analytic: Vec<Tensor>,
    eval: impl Fn(&ParamStore) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for (&p, grad) in params.iter().zip(&analytic) {
        for i in 0..grad.len() {
            let orig = store.value(p).data()[i];
            store.value_mut(p).data_mut()[i] = orig + step;
            let plus = eval(store)?;
            store.value_mut(p).data_mut()[i] = orig - step;
            let minus = eval(store)?;
            store.value_mut(p).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad.data()[i], numeric);
            checked += 1;
            if worst.is_none() || err > max_rel_error || err.is_nan() {
                max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                worst = Some((store.get(p).name.clone(), i));
            }
        }
    }
    store.zero_grads();
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        checked,
        tol,
        passed: max_rel_error <= tol && max_rel_error.is_finite(),
    })
}
