//! Adaptive moment estimation with per-group freezing.

use crate::params::{Group, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients whose global norm exceeds this are rescaled. `0` disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 1.0 }
    }
}

pub struct Adam<T> {
    cfg: AdamConfig,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
    steps: u32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols())).collect::<Vec<_>>();
        Self { cfg, first: zeros(), second: zeros(), steps: 0 }
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Applies one update to every parameter whose group passes `active`.
    /// Parameters outside the active groups are left bit-identical.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Matrix<T>], lr: f64, active: impl Fn(Group) -> bool) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.steps += 1;
        let mut clip = 1.0;
        if self.cfg.clip_norm > 0.0 {
            let total: f64 = store
                .iter()
                .zip(grads)
                .filter(|((_, p), _)| p.group.trainable() && active(p.group))
                .map(|(_, g)| g.as_slice().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
                .sum();
            let norm = total.sqrt();
            if norm > self.cfg.clip_norm {
                clip = self.cfg.clip_norm / norm;
            }
        }
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.steps as i32);
        let bc2 = 1.0 - b2.powi(self.steps as i32);
        let step_size = T::lit(lr * bc2.sqrt() / bc1);
        let eps = T::lit(self.cfg.eps * bc2.sqrt());
        let (b1t, b2t) = (T::lit(b1), T::lit(b2));
        let (one_b1, one_b2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
        let clip_t = T::lit(clip);
        for (i, (_, p)) in store.iter_mut().enumerate() {
            if !p.group.trainable() || !active(p.group) || lr == 0.0 {
                continue;
            }
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            for (((w, &g), mi), vi) in p.value.as_mut_slice().iter_mut().zip(grads[i].as_slice()).zip(m).zip(v) {
                let g = g * clip_t;
                *mi = b1t * *mi + one_b1 * g;
                *vi = b2t * *vi + one_b2 * g * g;
                *w -= step_size * *mi / (vi.sqrt() + eps);
            }
        }
    }
}
