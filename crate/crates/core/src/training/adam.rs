use crate::autodiff::{ParamStore, Tensor};

/// Adam with bias correction over every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    skipped: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || -> Vec<Tensor> {
            store.iter().map(|p| Tensor::zeros(p.value.shape())).collect()
        };
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Parameter updates skipped because their gradient was not finite.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.grad.all_finite() {
                self.skipped += 1;
                log::warn!("skipping Adam update of {}: non-finite gradient", p.name);
                continue;
            }
            let (b1, b2) = (self.beta1, self.beta2);
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        for (i, &v) in values.iter().enumerate() {
            s.add(format!("p{i}"), Tensor::vector(vec![v])).unwrap();
        }
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = store_with(&[0.5]);
        let mut adam = AdamState::new(&store, 1e-3);
        let id = store.id_of("p0").unwrap();
        store.get_mut(id).grad = Tensor::vector(vec![1.0]);
        adam.step(&mut store);
        // m̂ = g, v̂ = g², Δ = -lr·g/(|g| + ε)
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((store.value(id).item() - expected).abs() < 1e-15);
        assert_eq!(store.grad(id).item(), 0.0);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = store_with(&[0.25]);
        let mut adam = AdamState::new(&store, 1e-2);
        adam.step(&mut store);
        assert_eq!(store.value(store.id_of("p0").unwrap()).item(), 0.25);
    }

    #[test]
    fn identical_entries_move_identically() {
        let mut store = store_with(&[1.0, 1.0]);
        let mut adam = AdamState::new(&store, 1e-2);
        for step in 0..5 {
            for p in store.iter_mut() {
                p.grad = Tensor::vector(vec![0.3 * step as f64 - 0.4]);
            }
            adam.step(&mut store);
        }
        let v: Vec<f64> = store.iter().map(|p| p.value.item()).collect();
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn non_finite_gradient_skips_only_that_parameter() {
        let mut store = store_with(&[1.0, 1.0]);
        let mut adam = AdamState::new(&store, 1e-2);
        store.get_mut(store.id_of("p0").unwrap()).grad = Tensor::vector(vec![f64::NAN]);
        store.get_mut(store.id_of("p1").unwrap()).grad = Tensor::vector(vec![1.0]);
        adam.step(&mut store);
        assert_eq!(adam.skipped(), 1);
        assert_eq!(store.value(store.id_of("p0").unwrap()).item(), 1.0);
        assert!(store.value(store.id_of("p1").unwrap()).item() < 1.0);
    }
}
