//! AdamW and the one-cycle learning-rate policy.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay. Moments are kept in `f64`.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Real>(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.ids().map(|id| alloc::vec![0.0; store.tensor(id).numel()]).collect::<Vec<_>>();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. Parameters without a gradient are
    /// left untouched (no decay either).
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "gradient list does not match the parameter store");
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - Float::powi(c.beta1, self.step as i32);
        let bc2 = 1.0 - Float::powi(c.beta2, self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[k] else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = store.tensor_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g[i].to_f64_lossy();
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let mut x = p[i].to_f64_lossy();
                x -= lr * c.weight_decay * x;
                x -= lr * mhat / (Float::sqrt(vhat) + c.eps);
                p[i] = T::from_f64_lossy(x);
            }
        }
    }
}

/// Single-cycle policy: cosine warm-up from `max_lr / div_factor` to
/// `max_lr` over the first `pct_start` of the steps, then cosine annealing
/// to `initial / final_div_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

fn cos_anneal(start: f64, end: f64, pct: f64) -> f64 {
    end + (start - end) / 2.0 * (Float::cos(PI * pct) + 1.0)
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        Self { max_lr, total_steps, pct_start: 0.3, div_factor: 25.0, final_div_factor: 1e4 }
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.initial_lr() / self.final_div_factor
    }

    /// The step at which `max_lr` is reached.
    pub fn peak_step(&self) -> usize {
        let last = self.total_steps.saturating_sub(1);
        (Float::round(self.pct_start * last as f64) as usize).min(last)
    }

    /// Learning rate for zero-based `step`; steps past the end keep the
    /// final value.
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.max_lr;
        }
        let last = self.total_steps - 1;
        let step = step.min(last);
        let peak = self.peak_step();
        if step == peak {
            self.max_lr
        } else if step < peak {
            cos_anneal(self.initial_lr(), self.max_lr, step as f64 / peak as f64)
        } else {
            cos_anneal(self.max_lr, self.final_lr(), (step - peak) as f64 / (last - peak) as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    #[test]
    fn one_cycle_shape() {
        for total in [4usize, 10, 97, 1000] {
            let s = OneCycle::new(5e-4, total);
            let lrs: Vec<f64> = (0..total).map(|i| s.lr(i)).collect();
            assert_eq!(lrs.iter().filter(|&&l| l == 5e-4).count(), 1, "total {total}");
            assert!(lrs.iter().all(|&l| l <= 5e-4));
            assert!(lrs[0] < 5e-4);
            assert!(*lrs.last().unwrap() < lrs[0]);
        }
        let s = OneCycle::new(5e-4, 100);
        assert!((s.lr(0) - 2e-5).abs() < 1e-18);
        assert!((s.lr(99) - 2e-9).abs() < 1e-18);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new(0);
        let id = store.add("w", &[3], Init::Zeros);
        store.tensor_mut(id).data_mut().copy_from_slice(&[1.0, -2.0, 0.5]);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &store);
        opt.step(&mut store, &[Some(alloc::vec![0.3, -4.0, 0.0])], 0.1);
        let p = store.tensor(id).data();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut store = ParamStore::<f64>::new(0);
        let id = store.add("w", &[1], Init::Ones);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.5, ..Default::default() }, &store);
        opt.step(&mut store, &[Some(alloc::vec![0.0])], 0.1);
        assert!((store.tensor(id).data()[0] - 0.95).abs() < 1e-12);
    }
}
