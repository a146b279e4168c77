//! Bidirectional-LSTM summarisation policy trained with REINFORCE.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use comixify_nn::{init, manifest, Adam, AdamConfig, BoundParams, Float, ParamStore, Tape, Var};
use ndarray::{Array1, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{episode_reward, HighlightScores, SelectionMask};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

const DIRS: [&str; 2] = ["fwd", "bwd"];

/// Policy weights. Tensors: `lstm.{fwd,bwd}.{w_ih [D,4H], w_hh [H,4H], b [4H]}`,
/// `head.w [2H,1]`, `head.b [1]`; gate order is input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct DsnPolicy {
    pub params: ParamStore<f32>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl DsnPolicy {
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut params = ParamStore::new();
        for dir in DIRS {
            params.insert(format!("lstm.{dir}.w_ih"), init::uniform(&mut rng, &[input_dim, 4 * hidden_dim], bound));
            params.insert(format!("lstm.{dir}.w_hh"), init::uniform(&mut rng, &[hidden_dim, 4 * hidden_dim], bound));
            params.insert(format!("lstm.{dir}.b"), init::uniform(&mut rng, &[4 * hidden_dim], bound));
        }
        let hb = 1.0 / ((2 * hidden_dim) as f64).sqrt();
        params.insert("head.w", init::uniform(&mut rng, &[2 * hidden_dim, 1], hb));
        params.insert("head.b", init::uniform(&mut rng, &[1], hb));
        DsnPolicy { params, input_dim, hidden_dim }
    }

    /// Validates tensor layout and infers the dimensions.
    pub fn from_params(params: ParamStore<f32>) -> Result<Self> {
        let w = params
            .get("lstm.fwd.w_ih")
            .ok_or_else(|| Error::ModelLoad("missing tensor `lstm.fwd.w_ih`".into()))?;
        if w.ndim() != 2 || w.shape()[1] % 4 != 0 {
            return Err(Error::ModelLoad(format!("`lstm.fwd.w_ih` has shape {:?}", w.shape())));
        }
        let (d, h) = (w.shape()[0], w.shape()[1] / 4);
        let mut expected = Vec::new();
        for dir in DIRS {
            expected.push((format!("lstm.{dir}.w_ih"), vec![d, 4 * h]));
            expected.push((format!("lstm.{dir}.w_hh"), vec![h, 4 * h]));
            expected.push((format!("lstm.{dir}.b"), vec![4 * h]));
        }
        expected.push(("head.w".into(), vec![2 * h, 1]));
        expected.push(("head.b".into(), vec![1]));
        manifest::expect_shapes(&params, &expected)?;
        Ok(DsnPolicy { params, input_dim: d, hidden_dim: h })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (_, params) = manifest::load::<f32>(dir)?;
        Self::from_params(params)
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        manifest::save(dir, name, &self.params)?;
        Ok(())
    }
}

fn lstm_pass<F: Float>(tape: &mut Tape<F>, p: &BoundParams, dir: &str, xw: Var, t_len: usize, h: usize, reverse: bool) -> Vec<Var> {
    let w_hh = p.var(&format!("lstm.{dir}.w_hh"));
    let mut hs = vec![None; t_len];
    let mut hprev = tape.constant(ArrayD::zeros(IxDyn(&[1, h])));
    let mut cprev = tape.constant(ArrayD::zeros(IxDyn(&[1, h])));
    let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    for t in order {
        let xt = tape.slice_axis(xw, 0, t, 1);
        let hw = tape.matmul(hprev, w_hh);
        let gates = tape.add(xt, hw);
        let i = tape.slice_axis(gates, 1, 0, h);
        let f = tape.slice_axis(gates, 1, h, h);
        let g = tape.slice_axis(gates, 1, 2 * h, h);
        let o = tape.slice_axis(gates, 1, 3 * h, h);
        let (i, f, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.sigmoid(o));
        let g = tape.tanh(g);
        let fc = tape.mul(f, cprev);
        let ig = tape.mul(i, g);
        cprev = tape.add(fc, ig);
        let ct = tape.tanh(cprev);
        hprev = tape.mul(o, ct);
        hs[t] = Some(hprev);
    }
    hs.into_iter().map(|v| v.expect("every step visited")).collect()
}

/// Per-frame logits `[T]` for features `x` of shape `[T, D]`.
pub fn dsn_logits<F: Float>(tape: &mut Tape<F>, p: &BoundParams, x: ArrayD<F>, hidden: usize) -> Var {
    let t_len = x.shape()[0];
    let x = tape.constant(x);
    let mut dirs = Vec::with_capacity(2);
    for (k, dir) in DIRS.iter().enumerate() {
        let xw = tape.matmul(x, p.var(&format!("lstm.{dir}.w_ih")));
        let xw = tape.add_bias(xw, p.var(&format!("lstm.{dir}.b")), 1);
        let hs = lstm_pass(tape, p, dir, xw, t_len, hidden, k == 1);
        dirs.push(tape.concat(&hs, 0));
    }
    let h = tape.concat(&dirs, 1);
    let z = tape.matmul(h, p.var("head.w"));
    let z = tape.add_bias(z, p.var("head.b"), 1);
    tape.reshape(z, &[t_len])
}

/// `Σ_e c_e · log π(mask_e)` written as `Σ_t z_t w_t − s · Σ_t softplus(z_t)`
/// with `w = Σ_e c_e a_e` and `s = Σ_e c_e`, using
/// `log σ(z) = z − softplus(z)` and `log(1 − σ(z)) = −softplus(z)`.
pub fn log_prob_surrogate<F: Float>(tape: &mut Tape<F>, logits: Var, masks: &[Vec<bool>], coeffs: &[f64]) -> Var {
    let t_len = tape.shape(logits)[0];
    let mut w = vec![0.0f64; t_len];
    for (m, &c) in masks.iter().zip(coeffs) {
        for (wt, &a) in w.iter_mut().zip(m) {
            if a {
                *wt += c;
            }
        }
    }
    let s: f64 = coeffs.iter().sum();
    let w = tape.constant(ArrayD::from_shape_vec(IxDyn(&[t_len]), w.into_iter().map(F::c).collect()).expect("len"));
    let zw = tape.mul(logits, w);
    let zw = tape.sum(zw);
    let sp = tape.softplus(logits);
    let sp = tape.sum(sp);
    let sp = tape.scale(sp, F::c(s));
    tape.sub(zw, sp)
}

fn features_array(fm: &FeatureMatrix) -> ArrayD<f32> {
    fm.data.clone().into_dyn()
}

/// Selection probabilities from the trained policy.
pub fn score_highlightness(features: &FeatureMatrix, policy: &DsnPolicy) -> Result<HighlightScores> {
    if features.d() != policy.input_dim {
        return Err(Error::Shape(format!(
            "features have D={}, policy expects {}",
            features.d(),
            policy.input_dim
        )));
    }
    if features.t() == 0 {
        return Err(Error::EmptyInput("no frames to score".into()));
    }
    let mut tape = Tape::new();
    let p = policy.params.bind_const(&mut tape);
    let z = dsn_logits(&mut tape, &p, features_array(features), policy.hidden_dim);
    let probs = tape.value(z).iter().map(|&v| comixify_nn::tape::sigmoid(v)).collect();
    Ok(HighlightScores { probs })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DsnTrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    /// Rollouts per video per epoch.
    pub episodes: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub baseline_decay: f64,
    /// Weight of the `(mean p − 0.5)²` penalty.
    pub reg_weight: f64,
    pub seed: u64,
}

impl Default for DsnTrainConfig {
    fn default() -> Self {
        DsnTrainConfig {
            hidden_dim: 256,
            epochs: 60,
            episodes: 5,
            lr: 1e-5,
            weight_decay: 1e-5,
            baseline_decay: 0.9,
            reg_weight: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReward {
    pub epoch: usize,
    pub mean_reward: f64,
}

/// Trains a fresh policy (or continues `init`) on `corpus`.
pub fn train_dsn(
    corpus: &[FeatureMatrix],
    cfg: &DsnTrainConfig,
    init: Option<DsnPolicy>,
) -> Result<(DsnPolicy, Vec<EpochReward>)> {
    let first = corpus.first().ok_or_else(|| Error::Precondition("training corpus is empty".into()))?;
    let d = first.d();
    for (i, fm) in corpus.iter().enumerate() {
        if fm.t() < 2 {
            return Err(Error::Precondition(format!("video {i} has {} frames; at least 2 required", fm.t())));
        }
        if fm.d() != d {
            return Err(Error::Shape(format!("video {i} has D={}, expected {d}", fm.d())));
        }
    }
    let mut policy = match init {
        Some(p) if p.input_dim != d => {
            return Err(Error::Shape(format!("policy expects D={}, corpus has {d}", p.input_dim)))
        }
        Some(p) => p,
        None => DsnPolicy::new(d, cfg.hidden_dim, cfg.seed),
    };
    let mut log = Vec::new();
    if cfg.episodes == 0 {
        return Ok((policy, log));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
    let mut baselines = vec![0.0f64; corpus.len()];
    for epoch in 0..cfg.epochs {
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        for (v, fm) in corpus.iter().enumerate() {
            let mut tape = Tape::new();
            let bound = policy.params.bind(&mut tape);
            let z = dsn_logits(&mut tape, &bound, features_array(fm), policy.hidden_dim);
            let probs: Array1<f32> = tape.value(z).iter().map(|&v| comixify_nn::tape::sigmoid(v)).collect();
            let mut masks = Vec::with_capacity(cfg.episodes);
            let mut rewards = Vec::with_capacity(cfg.episodes);
            for _ in 0..cfg.episodes {
                let mask: Vec<bool> = probs.iter().map(|&p| rng.random::<f32>() < p).collect();
                let r = episode_reward(&fm.data.view(), &SelectionMask::from_bools(&mask))?;
                masks.push(mask);
                rewards.push(r);
            }
            let coeffs: Vec<f64> =
                rewards.iter().map(|r| -(r - baselines[v]) / cfg.episodes as f64).collect();
            let pg = log_prob_surrogate(&mut tape, z, &masks, &coeffs);
            let p = tape.sigmoid(z);
            let mp = tape.mean(p);
            let dev = tape.add_scalar(mp, -0.5);
            let reg = tape.square(dev);
            let reg = tape.scale(reg, cfg.reg_weight as f32);
            let loss = tape.add(pg, reg);
            if !tape.item(loss).is_finite() {
                return Err(Error::TrainingDiverged { unit: "epoch", index: epoch });
            }
            let mut grads = tape.backward(loss);
            let grads = bound.collect_grads(&tape, &mut grads);
            opt.step(&mut policy.params, &grads);
            let mean_r = rewards.iter().sum::<f64>() / rewards.len() as f64;
            baselines[v] = cfg.baseline_decay * baselines[v] + (1.0 - cfg.baseline_decay) * mean_r;
            reward_sum += rewards.iter().sum::<f64>();
            reward_count += rewards.len();
        }
        let mean_reward = reward_sum / reward_count as f64;
        if !mean_reward.is_finite() {
            return Err(Error::TrainingDiverged { unit: "epoch", index: epoch });
        }
        log.push(EpochReward { epoch: epoch + 1, mean_reward });
    }
    Ok((policy, log))
}

/// One `{"epoch", "mean_reward"}` object per line.
pub fn write_reward_log(path: &Path, log: &[EpochReward]) -> Result<()> {
    let f = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(f);
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}
