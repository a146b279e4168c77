//! Initialisation phases and alternating adversarial training.

use std::collections::BTreeSet;
use std::path::PathBuf;

use comixify_nn::{Adam, AdamConfig, BoundParams, ParamStore, Tape, Var};
use indexmap::IndexMap;
use ndarray::{Array4, ArrayD, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adversarial::{content_l1, discriminator_loss_logits, generator_loss_logits};
use super::edge::edge_blur;
use super::nets::{
    content_features, discriminator_logits, generator_forward, ContentNet, DiscriminatorConfig,
    DiscriminatorWeights, GeneratorConfig, GeneratorWeights,
};
use crate::error::{Error, Result};
use crate::frame::{to_batch, Frame};

/// Real photos, comics, and the comics with softened edges.
#[derive(Debug, Clone)]
pub struct TrainingTriplet {
    pub real_photos: Vec<Frame>,
    pub comics_images: Vec<Frame>,
    pub edge_blurred_comics: Vec<Frame>,
}

impl TrainingTriplet {
    /// Derives the edge-blurred set from the comics.
    pub fn new(real_photos: Vec<Frame>, comics_images: Vec<Frame>) -> Result<Self> {
        let edge_blurred_comics = comics_images.iter().map(edge_blur).collect();
        let t = TrainingTriplet { real_photos, comics_images, edge_blurred_comics };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let sets = [&self.real_photos, &self.comics_images, &self.edge_blurred_comics];
        if sets.iter().any(|s| s.is_empty()) {
            return Err(Error::Precondition("photos, comics and edge-blurred comics must all be nonempty".into()));
        }
        same_size(sets.iter().flat_map(|s| s.iter()))
    }
}

fn same_size<'a>(mut frames: impl Iterator<Item = &'a Frame>) -> Result<()> {
    let Some(first) = frames.next() else {
        return Err(Error::EmptyInput("no training images".into()));
    };
    let size = (first.width(), first.height());
    if frames.any(|f| (f.width(), f.height()) != size) {
        return Err(Error::Precondition("training images differ in resolution".into()));
    }
    if size.0 % 4 != 0 || size.1 % 4 != 0 {
        return Err(Error::Precondition(format!("training images must have sides divisible by 4, got {}x{}", size.0, size.1)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub omega: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub batch: usize,
    /// Generator steps of the adversarial phase.
    pub steps: usize,
    /// Generator steps per discriminator step.
    pub generator_per_discriminator: usize,
    pub pretrain_generator_steps: usize,
    pub pretrain_discriminator_steps: usize,
    pub skip_pretrain: bool,
    /// Save both networks every this many generator steps; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            omega: 10.0,
            lr_generator: 2e-4,
            lr_discriminator: 1e-4,
            batch: 4,
            steps: 300,
            generator_per_discriminator: 3,
            pretrain_generator_steps: 200,
            pretrain_discriminator_steps: 200,
            skip_pretrain: false,
            checkpoint_every: 0,
            checkpoint_dir: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Net {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub net: Net,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct GanRun {
    pub generator: GeneratorWeights,
    pub discriminator: DiscriminatorWeights,
    pub pretrain_log: Vec<LossRecord>,
    pub log: Vec<LossRecord>,
    pub generator_steps: usize,
    pub discriminator_steps: usize,
    /// Generator tensors that received a nonzero gradient at least once.
    pub touched: BTreeSet<String>,
    pub checkpoints: Vec<PathBuf>,
}

/// Cycles through shuffled epochs of `0..n`.
struct Batcher {
    n: usize,
    order: Vec<usize>,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        Batcher { n, order: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        let batch = batch.clamp(1, self.n);
        if self.order.len() < batch {
            let mut fresh: Vec<usize> = (0..self.n).collect();
            fresh.shuffle(&mut self.rng);
            self.order.extend(fresh);
        }
        self.order.drain(..batch).collect()
    }
}

fn stack(frames: &[Frame]) -> Array4<f32> {
    let refs: Vec<&Frame> = frames.iter().collect();
    to_batch(&refs, -1.0, 1.0)
}

fn pick(images: &Array4<f32>, idx: &[usize]) -> ArrayD<f32> {
    images.select(Axis(0), idx).into_dyn()
}

fn finite(v: f32, unit: &'static str, index: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v as f64)
    } else {
        Err(Error::TrainingDiverged { unit, index })
    }
}

fn grads_of(tape: &Tape<f32>, p: &BoundParams, loss: Var) -> IndexMap<String, ArrayD<f32>> {
    let mut g = tape.backward(loss);
    p.collect_grads(tape, &mut g)
}

fn adam(lr: f64) -> Adam<f32> {
    Adam::new(AdamConfig { lr, beta1: 0.5, ..AdamConfig::with_lr(lr) })
}

/// Content term of a generator batch, with gradients for the generator.
fn reconstruction(tape: &mut Tape<f32>, g: &ParamStore<f32>, content: &ContentNet, x: ArrayD<f32>) -> (BoundParams, Var, Var) {
    let gp = g.bind(tape);
    let cp = content.params.bind_const(tape);
    let x = tape.constant(x);
    let y = generator_forward(tape, &gp, x);
    let fx = content_features(tape, content, &cp, x);
    let fy = content_features(tape, content, &cp, y);
    (gp, y, content_l1(tape, fx, fy))
}

/// Trains the generator to reproduce its input under the content loss.
/// Returns the weights and the per-step content loss.
pub fn pretrain_generator(
    photos: &[Frame],
    steps: usize,
    content: &ContentNet,
    cfg: &GanTrainConfig,
    init: Option<GeneratorWeights>,
) -> Result<(GeneratorWeights, Vec<LossRecord>)> {
    if photos.is_empty() {
        return Err(Error::Precondition("pretraining needs at least one photo".into()));
    }
    same_size(photos.iter())?;
    let mut gen = init.unwrap_or_else(|| GeneratorWeights::new(cfg.generator, cfg.seed));
    gen.state.omega = cfg.omega;
    let images = stack(photos);
    let mut batches = Batcher::new(photos.len(), cfg.seed ^ 0x9e37);
    let mut opt = adam(cfg.lr_generator);
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let x = pick(&images, &batches.next(cfg.batch));
        let mut tape = Tape::new();
        let (gp, _, loss) = reconstruction(&mut tape, &gen.params, content, x);
        let lv = finite(tape.item(loss), "pretrain step", step)?;
        let grads = grads_of(&tape, &gp, loss);
        opt.step(&mut gen.params, &grads);
        log.push(LossRecord { step, net: Net::Generator, loss: lv });
    }
    Ok((gen, log))
}

/// Trains the discriminator to accept comics and reject both photos and
/// edge-blurred comics.
pub fn pretrain_discriminator(
    triplet: &TrainingTriplet,
    steps: usize,
    cfg: &GanTrainConfig,
    init: Option<DiscriminatorWeights>,
) -> Result<(DiscriminatorWeights, Vec<LossRecord>)> {
    triplet.validate()?;
    let mut disc = init.unwrap_or_else(|| DiscriminatorWeights::new(cfg.discriminator, cfg.seed.wrapping_add(1)));
    let photos = stack(&triplet.real_photos);
    let comics = stack(&triplet.comics_images);
    let edges = stack(&triplet.edge_blurred_comics);
    let mut bp = Batcher::new(triplet.real_photos.len(), cfg.seed ^ 0x51);
    let mut bc = Batcher::new(triplet.comics_images.len(), cfg.seed ^ 0x52);
    let mut be = Batcher::new(triplet.edge_blurred_comics.len(), cfg.seed ^ 0x53);
    let mut opt = adam(cfg.lr_discriminator);
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let xp = pick(&photos, &bp.next(cfg.batch));
        let xc = pick(&comics, &bc.next(cfg.batch));
        let xe = pick(&edges, &be.next(cfg.batch));
        let mut tape = Tape::new();
        let (dp, loss) = discriminator_step_loss(&mut tape, &disc.params, xc, xp, xe);
        let lv = finite(tape.item(loss), "pretrain step", step)?;
        let grads = grads_of(&tape, &dp, loss);
        opt.step(&mut disc.params, &grads);
        log.push(LossRecord { step, net: Net::Discriminator, loss: lv });
    }
    Ok((disc, log))
}

fn discriminator_step_loss(
    tape: &mut Tape<f32>,
    d: &ParamStore<f32>,
    comics: ArrayD<f32>,
    negatives: ArrayD<f32>,
    edges: ArrayD<f32>,
) -> (BoundParams, Var) {
    let dp = d.bind(tape);
    let c = tape.constant(comics);
    let n = tape.constant(negatives);
    let e = tape.constant(edges);
    let zc = discriminator_logits(tape, &dp, c);
    let zn = discriminator_logits(tape, &dp, n);
    let ze = discriminator_logits(tape, &dp, e);
    let loss = discriminator_loss_logits(tape, zc, zn, ze);
    (dp, loss)
}

fn generate(gen: &GeneratorWeights, x: ArrayD<f32>) -> ArrayD<f32> {
    let mut tape = Tape::new();
    let gp = gen.params.bind_const(&mut tape);
    let x = tape.constant(x);
    let y = generator_forward(&mut tape, &gp, x);
    tape.value(y).clone()
}

/// Alternating adversarial training. Without `init`, both pretraining
/// phases run first unless `skip_pretrain` is set.
pub fn train_comixgan(
    triplet: &TrainingTriplet,
    content: &ContentNet,
    cfg: &GanTrainConfig,
    init: Option<(GeneratorWeights, DiscriminatorWeights)>,
) -> Result<GanRun> {
    triplet.validate()?;
    let mut pretrain_log = Vec::new();
    let (mut gen, mut disc) = match init {
        Some(pair) => pair,
        None if cfg.skip_pretrain => (
            GeneratorWeights::new(cfg.generator, cfg.seed),
            DiscriminatorWeights::new(cfg.discriminator, cfg.seed.wrapping_add(1)),
        ),
        None => {
            let (g, lg) = pretrain_generator(&triplet.real_photos, cfg.pretrain_generator_steps, content, cfg, None)?;
            let (d, ld) = pretrain_discriminator(triplet, cfg.pretrain_discriminator_steps, cfg, None)?;
            pretrain_log.extend(lg);
            pretrain_log.extend(ld);
            (g, d)
        }
    };
    gen.state.omega = cfg.omega;
    gen.state.seed = cfg.seed;
    disc.state.seed = cfg.seed;

    let photos = stack(&triplet.real_photos);
    let comics = stack(&triplet.comics_images);
    let edges = stack(&triplet.edge_blurred_comics);
    let mut bg = Batcher::new(triplet.real_photos.len(), cfg.seed ^ 0x61);
    let mut bp = Batcher::new(triplet.real_photos.len(), cfg.seed ^ 0x62);
    let mut bc = Batcher::new(triplet.comics_images.len(), cfg.seed ^ 0x63);
    let mut be = Batcher::new(triplet.edge_blurred_comics.len(), cfg.seed ^ 0x64);
    let mut opt_g = adam(cfg.lr_generator);
    let mut opt_d = adam(cfg.lr_discriminator);
    let mut run = GanRun {
        generator: gen.clone(),
        discriminator: disc.clone(),
        pretrain_log,
        log: Vec::new(),
        generator_steps: 0,
        discriminator_steps: 0,
        touched: BTreeSet::new(),
        checkpoints: Vec::new(),
    };

    for step in 1..=cfg.steps {
        let x = pick(&photos, &bg.next(cfg.batch));
        let mut tape = Tape::new();
        let gp = gen.params.bind(&mut tape);
        let dp = disc.params.bind_const(&mut tape);
        let cp = content.params.bind_const(&mut tape);
        let xv = tape.constant(x);
        let y = generator_forward(&mut tape, &gp, xv);
        let zg = discriminator_logits(&mut tape, &dp, y);
        let fx = content_features(&mut tape, content, &cp, xv);
        let fy = content_features(&mut tape, content, &cp, y);
        let loss = generator_loss_logits(&mut tape, zg, fx, fy, cfg.omega);
        let lv = finite(tape.item(loss), "generator step", step)?;
        let grads = grads_of(&tape, &gp, loss);
        for (name, g) in &grads {
            if g.iter().any(|&v| v != 0.0) {
                run.touched.insert(name.clone());
            }
        }
        opt_g.step(&mut gen.params, &grads);
        run.generator_steps += 1;
        run.log.push(LossRecord { step, net: Net::Generator, loss: lv });

        if cfg.generator_per_discriminator > 0 && step % cfg.generator_per_discriminator == 0 {
            let fake = generate(&gen, pick(&photos, &bp.next(cfg.batch)));
            let xc = pick(&comics, &bc.next(cfg.batch));
            let xe = pick(&edges, &be.next(cfg.batch));
            let mut tape = Tape::new();
            let (dp, loss) = discriminator_step_loss(&mut tape, &disc.params, xc, fake, xe);
            let lv = finite(tape.item(loss), "discriminator step", step)?;
            let grads = grads_of(&tape, &dp, loss);
            opt_d.step(&mut disc.params, &grads);
            run.discriminator_steps += 1;
            disc.state.discriminator_steps += 1;
            run.log.push(LossRecord { step, net: Net::Discriminator, loss: lv });
        }

        gen.state.generator_steps += 1;
        disc.state.generator_steps = gen.state.generator_steps;
        gen.state.discriminator_steps = disc.state.discriminator_steps;
        if let (Some(dir), true) = (&cfg.checkpoint_dir, cfg.checkpoint_every > 0) {
            if step % cfg.checkpoint_every == 0 {
                let d = dir.join(format!("step_{step:06}"));
                gen.save(&d.join("generator"))?;
                disc.save(&d.join("discriminator"))?;
                run.checkpoints.push(d);
            }
        }
    }
    run.generator = gen;
    run.discriminator = disc;
    Ok(run)
}

/// Writes a loss log as JSON lines.
pub fn write_loss_log(path: &std::path::Path, log: &[LossRecord]) -> Result<()> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(Error::io(path))
}
