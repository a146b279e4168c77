//! Generator, patch discriminator and content-feature network.

use std::fs;
use std::path::Path;

use comixify_nn::{init, manifest, BoundParams, Float, ParamStore, Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{from_batch, to_batch, Frame};

const IN_EPS: f64 = 1e-5;
const LEAK: f64 = 0.2;
const STATE_FILE: &str = "state.json";

/// Channel widths: `base`, `2·base`, `4·base`; the full-size network uses 64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub base: usize,
    pub res_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { base: 64, res_blocks: 8 }
    }
}

/// Layer widths `base, 2b, 2b, 4b, 4b, 8b`; the full-size network uses 32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub base: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { base: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingState {
    pub omega: f64,
    pub generator_steps: u64,
    pub discriminator_steps: u64,
    pub seed: u64,
}

impl Default for TrainingState {
    fn default() -> Self {
        TrainingState { omega: 10.0, generator_steps: 0, discriminator_steps: 0, seed: 0 }
    }
}

fn missing(name: &str) -> Error {
    Error::ModelLoad(format!("missing tensor `{name}`"))
}

fn conv_param(p: &mut ParamStore<f32>, rng: &mut ChaCha8Rng, name: &str, c_out: usize, c_in: usize, k: usize) {
    p.insert(format!("{name}.w"), init::kaiming_normal(rng, &[c_out, c_in, k, k], c_in * k * k));
    p.insert(format!("{name}.b"), init::zeros(&[c_out]));
}

fn norm_param(p: &mut ParamStore<f32>, name: &str, c: usize) {
    p.insert(format!("{name}.g"), init::ones(&[c]));
    p.insert(format!("{name}.b"), init::zeros(&[c]));
}

fn conv_shapes(out: &mut Vec<(String, Vec<usize>)>, name: &str, c_out: usize, c_in: usize, k: usize) {
    out.push((format!("{name}.w"), vec![c_out, c_in, k, k]));
    out.push((format!("{name}.b"), vec![c_out]));
}

fn norm_shapes(out: &mut Vec<(String, Vec<usize>)>, name: &str, c: usize) {
    out.push((format!("{name}.g"), vec![c]));
    out.push((format!("{name}.b"), vec![c]));
}

fn conv<F: Float>(tape: &mut Tape<F>, p: &BoundParams, name: &str, x: Var, stride: usize) -> Var {
    let w = p.var(&format!("{name}.w"));
    let pad = tape.shape(w)[2] / 2;
    tape.conv2d(x, w, Some(p.var(&format!("{name}.b"))), stride, pad)
}

fn inorm<F: Float>(tape: &mut Tape<F>, p: &BoundParams, name: &str, x: Var) -> Var {
    let g = p.var(&format!("{name}.g"));
    let b = p.var(&format!("{name}.b"));
    tape.instance_norm(x, g, b, F::c(IN_EPS))
}

fn read_state(dir: &Path) -> Result<TrainingState> {
    let path = dir.join(STATE_FILE);
    if !path.exists() {
        return Ok(TrainingState::default());
    }
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::ModelLoad(format!("{}: {e}", path.display())))
}

fn write_state(dir: &Path, state: &TrainingState) -> Result<()> {
    let path = dir.join(STATE_FILE);
    let json = serde_json::to_vec_pretty(state).expect("state serialises");
    fs::write(&path, json).map_err(Error::io(&path))
}

// ---------------------------------------------------------------------------
// generator

fn generator_shapes(cfg: &GeneratorConfig) -> Vec<(String, Vec<usize>)> {
    let (c1, c2, c3) = (cfg.base, 2 * cfg.base, 4 * cfg.base);
    let mut s = Vec::new();
    conv_shapes(&mut s, "in.conv", c1, 3, 7);
    norm_shapes(&mut s, "in.norm", c1);
    for (name, ci, co) in [("down1", c1, c2), ("down2", c2, c3)] {
        conv_shapes(&mut s, &format!("{name}.conv1"), co, ci, 3);
        conv_shapes(&mut s, &format!("{name}.conv2"), co, co, 3);
        norm_shapes(&mut s, &format!("{name}.norm"), co);
    }
    for i in 1..=cfg.res_blocks {
        conv_shapes(&mut s, &format!("res{i}.conv1"), c3, c3, 3);
        norm_shapes(&mut s, &format!("res{i}.norm1"), c3);
        conv_shapes(&mut s, &format!("res{i}.conv2"), c3, c3, 3);
        norm_shapes(&mut s, &format!("res{i}.norm2"), c3);
    }
    for (name, ci, co) in [("up1", c3, c2), ("up2", c2, c1)] {
        conv_shapes(&mut s, &format!("{name}.conv1"), co, ci, 3);
        conv_shapes(&mut s, &format!("{name}.conv2"), co, co, 3);
        norm_shapes(&mut s, &format!("{name}.norm"), co);
    }
    conv_shapes(&mut s, "out.conv", 3, c1, 7);
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorWeights {
    pub params: ParamStore<f32>,
    pub config: GeneratorConfig,
    pub state: TrainingState,
}

impl GeneratorWeights {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        for (name, shape) in generator_shapes(&config) {
            if let Some(stem) = name.strip_suffix(".w") {
                conv_param(&mut p, &mut rng, stem, shape[0], shape[1], shape[2]);
            } else if let Some(stem) = name.strip_suffix(".g") {
                norm_param(&mut p, stem, shape[0]);
            }
        }
        GeneratorWeights { params: p, config, state: TrainingState { seed, ..Default::default() } }
    }

    /// Infers the configuration from tensor shapes and checks every tensor.
    pub fn from_params(params: ParamStore<f32>, state: TrainingState) -> Result<Self> {
        let w = params.get("in.conv.w").ok_or_else(|| missing("in.conv.w"))?;
        if w.ndim() != 4 {
            return Err(Error::ModelLoad(format!("`in.conv.w` has shape {:?}", w.shape())));
        }
        let base = w.shape()[0];
        let mut res_blocks = 0;
        while params.contains(&format!("res{}.conv1.w", res_blocks + 1)) {
            res_blocks += 1;
        }
        let config = GeneratorConfig { base, res_blocks };
        manifest::expect_shapes(&params, &generator_shapes(&config))?;
        Ok(GeneratorWeights { params, config, state })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (_, p) = manifest::load::<f32>(dir)?;
        Self::from_params(p, read_state(dir)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        manifest::save(dir, "generator", &self.params)?;
        write_state(dir, &self.state)
    }
}

/// Maps an NCHW batch in `[-1,1]` to a batch of the same shape in `(-1,1)`.
pub fn generator_forward<F: Float>(tape: &mut Tape<F>, p: &BoundParams, x: Var) -> Var {
    let mut h = conv(tape, p, "in.conv", x, 1);
    h = inorm(tape, p, "in.norm", h);
    h = tape.relu(h);
    for name in ["down1", "down2"] {
        h = conv(tape, p, &format!("{name}.conv1"), h, 2);
        h = conv(tape, p, &format!("{name}.conv2"), h, 1);
        h = inorm(tape, p, &format!("{name}.norm"), h);
        h = tape.relu(h);
    }
    let mut i = 1;
    while p.try_var(&format!("res{i}.conv1.w")).is_some() {
        let mut r = conv(tape, p, &format!("res{i}.conv1"), h, 1);
        r = inorm(tape, p, &format!("res{i}.norm1"), r);
        r = tape.relu(r);
        r = conv(tape, p, &format!("res{i}.conv2"), r, 1);
        r = inorm(tape, p, &format!("res{i}.norm2"), r);
        h = tape.add(h, r);
        i += 1;
    }
    for name in ["up1", "up2"] {
        h = tape.upsample2x(h);
        h = conv(tape, p, &format!("{name}.conv1"), h, 1);
        h = conv(tape, p, &format!("{name}.conv2"), h, 1);
        h = inorm(tape, p, &format!("{name}.norm"), h);
        h = tape.relu(h);
    }
    h = conv(tape, p, "out.conv", h, 1);
    tape.tanh(h)
}

/// Runs the generator on one frame. Sides that are not multiples of 4 are
/// reflect-padded on the right and bottom and cropped back afterwards.
pub fn stylize(frame: &Frame, weights: &GeneratorWeights) -> Frame {
    let pad = |n: u32| (4 - n % 4) % 4;
    let (w, h) = (frame.width(), frame.height());
    let padded = frame.pad_reflect(pad(w), pad(h));
    let mut tape = Tape::<f32>::new();
    let p = weights.params.bind_const(&mut tape);
    let x = tape.constant(to_batch(&[&padded], -1.0, 1.0).into_dyn());
    let y = generator_forward(&mut tape, &p, x);
    let out = tape.value(y).view().into_dimensionality().expect("4-d output");
    from_batch(&out, 0, -1.0, 1.0).crop(0, 0, w, h)
}

// ---------------------------------------------------------------------------
// discriminator

const DISC_LAYERS: [(&str, usize, usize, bool); 6] = [
    // name, width multiple of base, stride, instance norm
    ("d1", 1, 1, false),
    ("d2", 2, 2, false),
    ("d3", 2, 1, true),
    ("d4", 4, 2, false),
    ("d5", 4, 1, true),
    ("d6", 8, 1, true),
];

fn discriminator_shapes(cfg: &DiscriminatorConfig) -> Vec<(String, Vec<usize>)> {
    let mut s = Vec::new();
    let mut c_in = 3;
    for (name, mult, _, norm) in DISC_LAYERS {
        let c = mult * cfg.base;
        conv_shapes(&mut s, name, c, c_in, 3);
        if norm {
            norm_shapes(&mut s, &format!("{name}.norm"), c);
        }
        c_in = c;
    }
    conv_shapes(&mut s, "d7", 1, c_in, 1);
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorWeights {
    pub params: ParamStore<f32>,
    pub config: DiscriminatorConfig,
    pub state: TrainingState,
}

impl DiscriminatorWeights {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        for (name, shape) in discriminator_shapes(&config) {
            if let Some(stem) = name.strip_suffix(".w") {
                conv_param(&mut p, &mut rng, stem, shape[0], shape[1], shape[2]);
            } else if let Some(stem) = name.strip_suffix(".g") {
                norm_param(&mut p, stem, shape[0]);
            }
        }
        DiscriminatorWeights { params: p, config, state: TrainingState { seed, ..Default::default() } }
    }

    pub fn from_params(params: ParamStore<f32>, state: TrainingState) -> Result<Self> {
        let w = params.get("d1.w").ok_or_else(|| missing("d1.w"))?;
        let config = DiscriminatorConfig { base: w.shape()[0] };
        manifest::expect_shapes(&params, &discriminator_shapes(&config))?;
        Ok(DiscriminatorWeights { params, config, state })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (_, p) = manifest::load::<f32>(dir)?;
        Self::from_params(p, read_state(dir)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        manifest::save(dir, "discriminator", &self.params)?;
        write_state(dir, &self.state)
    }
}

/// Per-patch logits `[N, 1, H/4, W/4]`; apply a sigmoid for probabilities.
pub fn discriminator_logits<F: Float>(tape: &mut Tape<F>, p: &BoundParams, x: Var) -> Var {
    let mut h = x;
    for (name, _, stride, norm) in DISC_LAYERS {
        h = conv(tape, p, name, h, stride);
        if norm {
            h = inorm(tape, p, &format!("{name}.norm"), h);
        }
        h = tape.leaky_relu(h, F::c(LEAK));
    }
    conv(tape, p, "d7", h, 1)
}

/// Mean patch probability per frame.
pub fn discriminate(frames: &[&Frame], weights: &DiscriminatorWeights) -> Vec<f64> {
    let mut tape = Tape::<f32>::new();
    let p = weights.params.bind_const(&mut tape);
    let x = tape.constant(to_batch(frames, -1.0, 1.0).into_dyn());
    let z = discriminator_logits(&mut tape, &p, x);
    let z = tape.value(z);
    let per = z.len() / frames.len();
    z.as_slice()
        .expect("contiguous logits")
        .chunks(per)
        .map(|c| c.iter().map(|&v| comixify_nn::tape::sigmoid(v as f64)).sum::<f64>() / per as f64)
        .collect()
}

// ---------------------------------------------------------------------------
// content features

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// A VGG-style stack: blocks of 3×3 convolutions with ReLU, separated by
/// 2×2 max pooling. Tensors are named `block{b}.conv{i}.{w,b}`; the output
/// is the activation of the last convolution. Pretrained stacks expect
/// ImageNet-normalised input, which `imagenet_norm` applies on the fly.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentNet {
    pub params: ParamStore<f32>,
    pub blocks: Vec<usize>,
    pub imagenet_norm: bool,
}

impl ContentNet {
    /// Fixed random two-block stack used when no pretrained weights exist.
    pub fn random(width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        conv_param(&mut p, &mut rng, "block1.conv1", width, 3, 3);
        conv_param(&mut p, &mut rng, "block1.conv2", width, width, 3);
        conv_param(&mut p, &mut rng, "block2.conv1", 2 * width, width, 3);
        ContentNet { params: p, blocks: vec![2, 1], imagenet_norm: false }
    }

    pub fn from_params(params: ParamStore<f32>, imagenet_norm: bool) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut c_in = 3;
        for b in 1.. {
            let mut n = 0;
            while let Some(w) = params.get(&format!("block{b}.conv{}.w", n + 1)) {
                let name = format!("block{b}.conv{}", n + 1);
                if w.ndim() != 4 || w.shape()[1] != c_in || w.shape()[2] != 3 || w.shape()[3] != 3 {
                    return Err(Error::ModelLoad(format!("`{name}.w` has shape {:?}", w.shape())));
                }
                c_in = w.shape()[0];
                manifest::expect_shapes(&params, &[(format!("{name}.b"), vec![c_in])])?;
                n += 1;
            }
            if n == 0 {
                break;
            }
            blocks.push(n);
        }
        if blocks.is_empty() {
            return Err(missing("block1.conv1.w"));
        }
        Ok(ContentNet { params, blocks, imagenet_norm })
    }

    /// Loads a pretrained stack; its input is ImageNet-normalised.
    pub fn load(dir: &Path) -> Result<Self> {
        let (_, p) = manifest::load::<f32>(dir)?;
        Self::from_params(p, true)
    }

    pub fn layer_id(&self) -> String {
        format!("block{}.conv{}", self.blocks.len(), self.blocks.last().copied().unwrap_or(0))
    }
}

/// Content features of an NCHW batch in `[-1,1]`.
pub fn content_features<F: Float>(tape: &mut Tape<F>, net: &ContentNet, p: &BoundParams, x: Var) -> Var {
    let mut h = x;
    if net.imagenet_norm {
        let shape = tape.shape(x).to_vec();
        let k = ArrayD::from_shape_fn(IxDyn(&shape), |ix| F::c(0.5 / IMAGENET_STD[ix[1]]));
        let off = ArrayD::from_shape_fn(IxDyn(&[3]), |ix| F::c((0.5 - IMAGENET_MEAN[ix[0]]) / IMAGENET_STD[ix[0]]));
        let k = tape.constant(k);
        let off = tape.constant(off);
        h = tape.mul(h, k);
        h = tape.add_bias(h, off, 1);
    }
    for (bi, &n) in net.blocks.iter().enumerate() {
        if bi > 0 {
            h = tape.max_pool2d(h, 2, 2, 0, false);
        }
        for i in 1..=n {
            h = conv(tape, p, &format!("block{}.conv{i}", bi + 1), h, 1);
            h = tape.relu(h);
        }
    }
    h
}
