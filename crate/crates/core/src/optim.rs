//! Adam with bias-corrected moments.

use alloc::vec::Vec;

use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| alloc::vec![0.0; t.numel()]).collect();
        OptimizerState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// True when every moment buffer matches its parameter's size.
    pub fn matches(&self, store: &ParamStore) -> bool {
        self.m.len() == store.len()
            && self.v.len() == store.len()
            && store
                .iter()
                .all(|(id, _, t)| self.m[id.0].len() == t.numel() && self.v[id.0].len() == t.numel())
    }
}

/// One Adam update on a flat slice. `t` is the 1-based step.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
}

/// Applies one step to every parameter with `requires_grad`, reading the
/// accumulated `grad` field (absent means zero).
pub fn adam_step(store: &mut ParamStore, state: &mut OptimizerState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step;
    for (id, _, tensor) in store.iter_mut() {
        if !tensor.requires_grad {
            continue;
        }
        let grad = tensor.grad.take().unwrap_or_else(|| alloc::vec![0.0; tensor.numel()]);
        adam_update(&mut tensor.data, &grad, &mut state.m[id.0], &mut state.v[id.0], t, cfg);
        tensor.grad = Some(grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_grad_leaves_params() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(alloc::vec![3], alloc::vec![0.5, -1.0, 2.0]).unwrap());
        let before = store.clone();
        let mut state = OptimizerState::new(&store);
        adam_step(&mut store, &mut state, &AdamConfig::default());
        assert_eq!(store.get(crate::tensor::ParamId(0)).data, before.get(crate::tensor::ParamId(0)).data);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_by_hand() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        for g in [0.3, -2.0, 1e-6] {
            let (mut p, mut m, mut v) = ([1.0], [0.0], [0.0]);
            adam_update(&mut p, &[g], &mut m, &mut v, 1, &cfg);
            let m_hat = (1.0 - 0.9) * g / (1.0 - 0.9);
            let v_hat = (1.0 - 0.999) * g * g / (1.0 - 0.999);
            let want = 1.0 - 0.01 * m_hat / (f64::sqrt(v_hat) + 1e-8);
            assert!((p[0] - want).abs() < 1e-15, "{} vs {}", p[0], want);
            assert!(((1.0 - p[0]) - 0.01 * g / (g.abs() + 1e-8)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_grad_update_tends_to_lr() {
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        let mut last = 0.0;
        for t in 1..=5000 {
            let before = p[0];
            adam_update(&mut p, &[0.7], &mut m, &mut v, t, &cfg);
            last = before - p[0];
        }
        assert!((last - 1e-3).abs() < 1e-9, "{last}");
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::new(alloc::vec![2], alloc::vec![0.1, 0.2]).unwrap());
        store.get_mut(id).grad = Some(alloc::vec![5.0, -3.0]);
        let before = store.get(id).data.clone();
        let mut state = OptimizerState::new(&store);
        adam_step(&mut store, &mut state, &AdamConfig { lr: 0.0, ..AdamConfig::default() });
        assert!(store.get(id).data.iter().zip(&before).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(state.matches(&store));
    }
}
