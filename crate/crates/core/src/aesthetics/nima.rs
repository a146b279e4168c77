//! Rating-distribution predictor trained with the EMD objective.

use std::path::Path;

use comixify_nn::{init, manifest, Adam, AdamConfig, BoundParams, Float, ParamStore, Tape, Var};
use ndarray::{Array2, Array4, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RatingDistribution, BINS};
use crate::error::{Error, Result};
use crate::frame::{to_batch, Frame};

/// Side of the square network input.
pub const QUALITY_INPUT: u32 = 64;
const CONVS: [&str; 3] = ["conv1", "conv2", "conv3"];

/// Three stride-2 3×3 convolutions with ReLU, global average pooling and a
/// 10-way softmax head. Widths are read from the tensor shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityModel {
    pub params: ParamStore<f32>,
}

impl QualityModel {
    pub fn new(width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut c_in = 3;
        for (i, name) in CONVS.iter().enumerate() {
            let c_out = if i == 0 { width / 2 } else { width }.max(1);
            p.insert(format!("{name}.w"), init::kaiming_normal(&mut rng, &[c_out, c_in, 3, 3], c_in * 9));
            p.insert(format!("{name}.b"), init::zeros(&[c_out]));
            c_in = c_out;
        }
        p.insert("fc.w", init::normal(&mut rng, &[c_in, BINS], 0.01));
        p.insert("fc.b", init::zeros(&[BINS]));
        QualityModel { params: p }
    }

    pub fn from_params(params: ParamStore<f32>) -> Result<Self> {
        let mut c_in = 3;
        for name in CONVS {
            let w = params
                .get(&format!("{name}.w"))
                .ok_or_else(|| Error::ModelLoad(format!("missing tensor `{name}.w`")))?;
            if w.ndim() != 4 || w.shape()[1] != c_in {
                return Err(Error::ModelLoad(format!("`{name}.w` has shape {:?}", w.shape())));
            }
            let c_out = w.shape()[0];
            manifest::expect_shapes(&params, &[(format!("{name}.b"), vec![c_out])])?;
            c_in = c_out;
        }
        manifest::expect_shapes(&params, &[("fc.w".into(), vec![c_in, BINS]), ("fc.b".into(), vec![BINS])])?;
        Ok(QualityModel { params })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (_, p) = manifest::load::<f32>(dir)?;
        Self::from_params(p)
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        manifest::save(dir, name, &self.params)?;
        Ok(())
    }
}

fn preprocess(frames: &[&Frame]) -> Array4<f32> {
    let resized: Vec<Frame> = frames.iter().map(|f| f.resize(QUALITY_INPUT, QUALITY_INPUT)).collect();
    let refs: Vec<&Frame> = resized.iter().collect();
    to_batch(&refs, -1.0, 1.0)
}

/// Logits `[B, 10]` for an NCHW batch.
pub fn quality_logits<F: Float>(tape: &mut Tape<F>, p: &BoundParams, x: Var) -> Var {
    let mut h = x;
    for name in CONVS {
        let w = p.var(&format!("{name}.w"));
        let pad = tape.shape(w)[2] / 2;
        h = tape.conv2d(h, w, Some(p.var(&format!("{name}.b"))), 2, pad);
        h = tape.relu(h);
    }
    let pooled = tape.global_avg_pool(h);
    let z = tape.matmul(pooled, p.var("fc.w"));
    tape.add_bias(z, p.var("fc.b"), 1)
}

pub fn predict_rating_distribution(frame: &Frame, model: &QualityModel) -> RatingDistribution {
    let mut tape = Tape::new();
    let p = model.params.bind_const(&mut tape);
    let x = tape.constant(preprocess(&[frame]).into_dyn());
    let z = quality_logits(&mut tape, &p, x);
    let probs = tape.softmax(z);
    let v = tape.value(probs);
    let mut out = [0.0f64; BINS];
    for (o, &p) in out.iter_mut().zip(v.iter()) {
        *o = p as f64;
    }
    // renormalise in f64 so the sum-to-one invariant holds tightly
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    RatingDistribution { p: out }
}

/// Mean over the batch of `sqrt(mean_k (CDF_p − CDF_q)² + eps)`.
pub fn emd_loss_var<F: Float>(tape: &mut Tape<F>, probs: Var, target: Var, eps: f64) -> Var {
    let b = tape.shape(probs)[0];
    let tri = ArrayD::from_shape_fn(IxDyn(&[BINS, BINS]), |ix| if ix[0] <= ix[1] { F::one() } else { F::zero() });
    let tri = tape.constant(tri);
    let cp = tape.matmul(probs, tri);
    let cq = tape.matmul(target, tri);
    let d = tape.sub(cp, cq);
    let d2 = tape.square(d);
    let ones = tape.constant(ArrayD::from_elem(IxDyn(&[BINS, 1]), F::c(1.0 / BINS as f64)));
    let per = tape.matmul(d2, ones);
    let per = tape.add_scalar(per, F::c(eps));
    let per = tape.sqrt(per);
    let per = tape.reshape(per, &[b]);
    tape.mean(per)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityTrainConfig {
    pub width: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for QualityTrainConfig {
    fn default() -> Self {
        QualityTrainConfig { width: 32, steps: 100, batch: 8, lr: 3e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss: f64,
}

/// Minimises the mean EMD between predicted and target histograms.
pub fn train_quality_model(
    corpus: &[(Frame, RatingDistribution)],
    cfg: &QualityTrainConfig,
) -> Result<(QualityModel, Vec<StepLoss>)> {
    if corpus.is_empty() {
        return Err(Error::Precondition("quality corpus is empty".into()));
    }
    for (_, d) in corpus {
        d.validate()?;
    }
    let frames: Vec<&Frame> = corpus.iter().map(|(f, _)| f).collect();
    let images = preprocess(&frames);
    let targets = Array2::from_shape_fn((corpus.len(), BINS), |(i, k)| corpus[i].1.p[k] as f32);
    let mut model = QualityModel::new(cfg.width, cfg.seed);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(cfg.steps);
    let batch = cfg.batch.clamp(1, corpus.len());
    for step in 0..cfg.steps {
        if order.len() < batch {
            let mut fresh: Vec<usize> = (0..corpus.len()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
        }
        let idx: Vec<usize> = order.drain(..batch).collect();
        let x = images.select(Axis(0), &idx);
        let y = targets.select(Axis(0), &idx);
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let xv = tape.constant(x.into_dyn());
        let yv = tape.constant(y.into_dyn());
        let z = quality_logits(&mut tape, &p, xv);
        let probs = tape.softmax(z);
        let loss = emd_loss_var(&mut tape, probs, yv, 1e-8);
        let lv = tape.item(loss) as f64;
        if !lv.is_finite() {
            return Err(Error::TrainingDiverged { unit: "step", index: step });
        }
        let mut g = tape.backward(loss);
        let grads = p.collect_grads(&tape, &mut g);
        opt.step(&mut model.params, &grads);
        log.push(StepLoss { step, loss: lv });
    }
    Ok((model, log))
}

/// Mean EMD of the model over a corpus, for reporting.
pub fn corpus_emd(model: &QualityModel, corpus: &[(Frame, RatingDistribution)]) -> Result<f64> {
    let mut total = 0.0;
    for (f, d) in corpus {
        total += super::emd_loss(&predict_rating_distribution(f, model), d, 2.0)?;
    }
    Ok(total / corpus.len().max(1) as f64)
}
