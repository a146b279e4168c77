//! Adam with optional L2 weight decay.

use indexmap::IndexMap;
use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    cfg: AdamConfig,
    step: u64,
    m: IndexMap<String, ArrayD<F>>,
    v: IndexMap<String, ArrayD<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, step: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Names missing from `grads` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &IndexMap<String, ArrayD<F>>) {
        self.step += 1;
        let b1 = F::c(self.cfg.beta1);
        let b2 = F::c(self.cfg.beta2);
        let one = F::one();
        let bc1 = F::c(1.0 - self.cfg.beta1.powi(self.step as i32));
        let bc2 = F::c(1.0 - self.cfg.beta2.powi(self.step as i32));
        let lr = F::c(self.cfg.lr);
        let eps = F::c(self.cfg.eps);
        let wd = F::c(self.cfg.weight_decay);
        for (name, grad) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| ArrayD::zeros(p.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| ArrayD::zeros(p.raw_dim()));
            Zip::from(p).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + wd * *p;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}
