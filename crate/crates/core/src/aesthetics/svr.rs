//! Epsilon-insensitive support-vector regression with an RBF kernel.
//!
//! The bias is folded into the kernel (`K + 1`), which removes the equality
//! constraint from the dual so plain coordinate descent applies:
//!
//! `min_β ½ βᵀ(K+1)β − yᵀβ + ε‖β‖₁   s.t.  |β_i| ≤ C`

use std::path::Path;

use comixify_nn::{manifest, ParamStore};
use ndarray::{Array1, Array2, ArrayD, ArrayView1, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    /// RBF width; `None` means `1 / D`.
    pub gamma: Option<f64>,
    pub max_epochs: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig { c: 1.0, epsilon: 0.1, gamma: None, max_epochs: 1000, tol: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub support: Array2<f64>,
    pub coef: Array1<f64>,
    pub intercept: f64,
    pub gamma: f64,
    /// Set when every training label was identical.
    pub degenerate: bool,
}

fn rbf(gamma: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
    (-gamma * d2).exp()
}

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

pub fn train_svr(x: &Array2<f64>, y: &[f64], cfg: &SvrConfig) -> Result<SvrModel> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Precondition(format!("need at least 2 samples, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} labels", y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite training data".into()));
    }
    let gamma = cfg.gamma.unwrap_or(1.0 / x.ncols().max(1) as f64);
    let k = Array2::from_shape_fn((n, n), |(i, j)| rbf(gamma, x.row(i), x.row(j)) + 1.0);
    let mut beta = vec![0.0f64; n];
    // f = (K + 1) β
    let mut f = vec![0.0f64; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut max_delta = 0.0f64;
        for &i in &order {
            let kii = k[[i, i]];
            let g = f[i] - y[i];
            let u = kii * beta[i] - g;
            let new = (soft_threshold(u, cfg.epsilon) / kii).clamp(-cfg.c, cfg.c);
            let delta = new - beta[i];
            if delta != 0.0 {
                beta[i] = new;
                for (fj, kj) in f.iter_mut().zip(k.row(i)) {
                    *fj += delta * kj;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < cfg.tol {
            break;
        }
    }
    let sv: Vec<usize> = (0..n).filter(|&i| beta[i] != 0.0).collect();
    let support = Array2::from_shape_fn((sv.len(), x.ncols()), |(r, c)| x[[sv[r], c]]);
    let coef: Array1<f64> = sv.iter().map(|&i| beta[i]).collect();
    let intercept = coef.sum();
    let degenerate = y.iter().all(|v| *v == y[0]);
    Ok(SvrModel { support, coef, intercept, gamma, degenerate })
}

impl SvrModel {
    /// A model that predicts 0 everywhere.
    pub fn empty(dim: usize) -> Self {
        SvrModel { support: Array2::zeros((0, dim)), coef: Array1::zeros(0), intercept: 0.0, gamma: 1.0, degenerate: true }
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let k: f64 = self
            .support
            .rows()
            .into_iter()
            .zip(self.coef.iter())
            .map(|(s, c)| c * rbf(self.gamma, s, x))
            .sum();
        k + self.intercept
    }

    pub fn to_params(&self) -> ParamStore<f32> {
        let mut p = ParamStore::new();
        let (n, d) = self.support.dim();
        let f = |v: &f64| *v as f32;
        p.insert("svr.support", ArrayD::from_shape_vec(IxDyn(&[n, d]), self.support.iter().map(f).collect()).expect("shape"));
        p.insert("svr.coef", ArrayD::from_shape_vec(IxDyn(&[n]), self.coef.iter().map(f).collect()).expect("shape"));
        p.insert("svr.intercept", ArrayD::from_elem(IxDyn(&[1]), self.intercept as f32));
        p.insert("svr.gamma", ArrayD::from_elem(IxDyn(&[1]), self.gamma as f32));
        p.insert("svr.degenerate", ArrayD::from_elem(IxDyn(&[1]), if self.degenerate { 1.0 } else { 0.0 }));
        p
    }

    pub fn from_params(p: &ParamStore<f32>) -> Result<Self> {
        let get = |name: &str| p.get(name).ok_or_else(|| Error::ModelLoad(format!("missing tensor `{name}`")));
        let support = get("svr.support")?;
        let coef = get("svr.coef")?;
        if support.ndim() != 2 || coef.ndim() != 1 || coef.len() != support.shape()[0] {
            return Err(Error::ModelLoad("inconsistent support-vector tensors".into()));
        }
        let scalar = |name: &str| -> Result<f64> {
            let t = get(name)?;
            if t.len() != 1 {
                return Err(Error::ModelLoad(format!("`{name}` must hold one value")));
            }
            Ok(t.iter().next().copied().unwrap_or_default() as f64)
        };
        let (n, d) = (support.shape()[0], support.shape()[1]);
        Ok(SvrModel {
            support: Array2::from_shape_vec((n, d), support.iter().map(|&v| v as f64).collect()).expect("shape"),
            coef: coef.iter().map(|&v| v as f64).collect(),
            intercept: scalar("svr.intercept")?,
            gamma: scalar("svr.gamma")?,
            degenerate: p.contains("svr.degenerate") && scalar("svr.degenerate")? != 0.0,
        })
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        manifest::save(dir, name, &self.to_params())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (_, p) = manifest::load::<f32>(dir)?;
        Self::from_params(&p)
    }
}
