//! End-to-end comixification: video in, comic pages out.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aesthetics::{AestheticBackend, AestheticKind, NimaBackend, PopularityBackend, QualityModel, SvrModel};
use crate::composer::{compose, Layout};
use crate::error::{Error, Result};
use crate::features::{extract_features, load_extractor, FeatureExtractor};
use crate::ingest::{self, samples, Fetcher, VideoSource};
use crate::kts::{segment, KtsConfig};
use crate::selector::{select_keyframes, KeyframeSet};
use crate::styletransfer::{stylize, GeneratorConfig, GeneratorWeights};
use crate::summarizer::{score_highlightness, DsnPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramesMode {
    Basic,
    BasicVtw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Comixgan,
    CartoonganHayao,
    CartoonganHosoda,
}

impl FramesMode {
    pub const ALL: [FramesMode; 2] = [FramesMode::Basic, FramesMode::BasicVtw];

    pub fn name(self) -> &'static str {
        match self {
            FramesMode::Basic => "basic",
            FramesMode::BasicVtw => "basic_vtw",
        }
    }
}

impl Style {
    pub const ALL: [Style; 3] = [Style::Comixgan, Style::CartoonganHayao, Style::CartoonganHosoda];

    pub fn name(self) -> &'static str {
        match self {
            Style::Comixgan => "comixgan",
            Style::CartoonganHayao => "cartoongan_hayao",
            Style::CartoonganHosoda => "cartoongan_hosoda",
        }
    }
}

pub const AESTHETIC_ALL: [AestheticKind; 2] = [AestheticKind::Popularity, AestheticKind::Nima];

pub fn aesthetic_name(k: AestheticKind) -> &'static str {
    match k {
        AestheticKind::Popularity => "popularity",
        AestheticKind::Nima => "nima",
    }
}

fn parse_named<T: Copy>(kind: &str, value: &str, all: &[T], name: impl Fn(T) -> &'static str) -> Result<T> {
    all.iter().copied().find(|&v| name(v) == value).ok_or_else(|| {
        let allowed: Vec<&str> = all.iter().map(|&v| name(v)).collect();
        Error::Constraint(format!("unknown {kind} `{value}`; allowed: {}", allowed.join(", ")))
    })
}

pub fn parse_style(s: &str) -> Result<Style> {
    parse_named("style", s, &Style::ALL, Style::name)
}

pub fn parse_frames_mode(s: &str) -> Result<FramesMode> {
    parse_named("frames_mode", s, &FramesMode::ALL, FramesMode::name)
}

pub fn parse_aesthetic(s: &str) -> Result<AestheticKind> {
    parse_named("aesthetic", s, &AESTHETIC_ALL, aesthetic_name)
}

pub const DEFAULT_K: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub frames_mode: FramesMode,
    pub aesthetic: AestheticKind,
    pub style: Style,
    pub k: usize,
    /// Candidate count; `None` means `4k`, clamped to the sampled frames.
    pub n: Option<usize>,
    pub sample_fps: f64,
    pub layout: Layout,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            frames_mode: FramesMode::Basic,
            aesthetic: AestheticKind::Nima,
            style: Style::Comixgan,
            k: DEFAULT_K,
            n: None,
            sample_fps: ingest::DEFAULT_SAMPLE_FPS,
            layout: Layout::default(),
        }
    }
}

impl PipelineOptions {
    /// Checks what can be checked before seeing the video.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Constraint("k must be at least 1".into()));
        }
        if let Some(n) = self.n {
            if n % self.k != 0 {
                return Err(Error::Constraint(format!("k={} must divide n={n}", self.k)));
            }
        }
        if !(self.sample_fps > 0.0) {
            return Err(Error::Constraint(format!("sample_fps must be positive, got {}", self.sample_fps)));
        }
        Ok(())
    }

    /// Candidate count for a video with `t` sampled frames.
    pub fn resolve_n(&self, t: usize) -> Result<usize> {
        match self.n {
            Some(n) if n > t => Err(Error::Constraint(format!("n={n} exceeds the {t} sampled frames"))),
            Some(n) => Ok(n),
            None => {
                let n = (4 * self.k).min(t / self.k * self.k);
                if n == 0 {
                    return Err(Error::Constraint(format!("k={} exceeds the {t} sampled frames", self.k)));
                }
                Ok(n)
            }
        }
    }
}

/// Allowed option values with their defaults, for clients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptionCatalog {
    pub frames_mode: Vec<String>,
    pub aesthetic: Vec<String>,
    pub style: Vec<String>,
    pub defaults: PipelineOptions,
}

pub fn option_catalog() -> OptionCatalog {
    OptionCatalog {
        frames_mode: FramesMode::ALL.iter().map(|m| m.name().into()).collect(),
        aesthetic: AESTHETIC_ALL.iter().map(|&a| aesthetic_name(a).into()).collect(),
        style: Style::ALL.iter().map(|s| s.name().into()).collect(),
        defaults: PipelineOptions::default(),
    }
}

// ---------------------------------------------------------------------------
// models

/// Where a loaded model came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelOrigin {
    Manifest,
    Seeded,
}

pub const FALLBACK_SEED: u64 = 0;
const FALLBACK_DSN_HIDDEN: usize = 64;
const FALLBACK_QUALITY_WIDTH: usize = 16;
const FALLBACK_GENERATOR: GeneratorConfig = GeneratorConfig { base: 16, res_blocks: 4 };

/// Every model the pipeline needs, loaded once and shared read-only.
pub struct ModelRegistry {
    pub extractor: FeatureExtractor,
    pub dsn: BTreeMap<FramesMode, DsnPolicy>,
    pub popularity: PopularityBackend,
    pub nima: NimaBackend,
    pub generators: BTreeMap<Style, GeneratorWeights>,
    pub origins: BTreeMap<String, ModelOrigin>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRegistry").field("extractor", &self.extractor).field("origins", &self.origins).finish()
    }
}

fn load_or<T>(
    origins: &mut BTreeMap<String, ModelOrigin>,
    dir: Option<&Path>,
    sub: &str,
    strict: bool,
    load: impl FnOnce(&Path) -> Result<T>,
    seeded: impl FnOnce() -> T,
) -> Result<T> {
    let path = dir.map(|d| d.join(sub));
    match path {
        Some(p) if p.join("manifest.json").exists() => {
            let v = load(&p).map_err(|e| Error::ModelLoad(format!("{sub}: {e}")))?;
            origins.insert(sub.into(), ModelOrigin::Manifest);
            Ok(v)
        }
        _ if strict => Err(Error::ModelLoad(format!("no `{sub}` manifest in the models directory"))),
        _ => {
            origins.insert(sub.into(), ModelOrigin::Seeded);
            Ok(seeded())
        }
    }
}

impl ModelRegistry {
    /// Loads each model from `dir/<name>/manifest.json`. A missing manifest is
    /// replaced by a seeded model unless `strict`; a present but invalid one
    /// is always an error.
    ///
    /// Names: `extractor`, `dsn_basic`, `dsn_basic_vtw`, `popularity`,
    /// `nima`, `comixgan`, `cartoongan_hayao`, `cartoongan_hosoda`.
    pub fn load(dir: Option<&Path>, strict: bool) -> Result<Self> {
        let mut origins = BTreeMap::new();
        let extractor = load_or(&mut origins, dir, "extractor", strict, load_extractor, FeatureExtractor::stub)?;
        let d = extractor.output_dim;
        let mut dsn = BTreeMap::new();
        for (i, mode) in FramesMode::ALL.into_iter().enumerate() {
            let name = format!("dsn_{}", mode.name());
            let seed = FALLBACK_SEED + i as u64;
            let p = load_or(&mut origins, dir, &name, strict, DsnPolicy::load, || {
                DsnPolicy::new(d, FALLBACK_DSN_HIDDEN, seed)
            })?;
            if p.input_dim != d {
                return Err(Error::ModelLoad(format!("{name} expects {}-d features, extractor gives {d}", p.input_dim)));
            }
            dsn.insert(mode, p);
        }
        let svr = load_or(&mut origins, dir, "popularity", strict, SvrModel::load, || SvrModel::empty(d))?;
        if svr.dim() != d {
            return Err(Error::ModelLoad(format!("popularity expects {}-d features, extractor gives {d}", svr.dim())));
        }
        let quality = load_or(&mut origins, dir, "nima", strict, QualityModel::load, || {
            QualityModel::new(FALLBACK_QUALITY_WIDTH, FALLBACK_SEED)
        })?;
        let mut generators = BTreeMap::new();
        for (i, style) in Style::ALL.into_iter().enumerate() {
            let seed = FALLBACK_SEED + 10 + i as u64;
            let g = load_or(&mut origins, dir, style.name(), strict, GeneratorWeights::load, || {
                GeneratorWeights::new(FALLBACK_GENERATOR, seed)
            })?;
            generators.insert(style, g);
        }
        Ok(ModelRegistry {
            extractor,
            dsn,
            popularity: PopularityBackend { model: svr },
            nima: NimaBackend { model: quality },
            generators,
            origins,
        })
    }

    /// All models seeded; no files are read.
    pub fn seeded() -> Self {
        Self::load(None, false).expect("seeded models are consistent")
    }

    pub fn aesthetic(&self, kind: AestheticKind) -> &dyn AestheticBackend {
        match kind {
            AestheticKind::Popularity => &self.popularity,
            AestheticKind::Nima => &self.nima,
        }
    }
}

// ---------------------------------------------------------------------------
// running

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Validate,
    Fetch,
    Ingest,
    Features,
    Summarize,
    Segment,
    Select,
    Stylize,
    Compose,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serialises");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {error}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

/// Where the video comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSpec {
    Path(PathBuf),
    Url(String),
    Sample(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub source: VideoSource,
    pub n: usize,
    pub k: usize,
    pub keyframes: KeyframeSet,
    pub keyframe_times_s: Vec<f64>,
    pub pages: Vec<PathBuf>,
    pub timings: Vec<StageTiming>,
}

struct Clock<'a> {
    timings: Vec<StageTiming>,
    progress: &'a dyn Fn(Stage),
}

impl Clock<'_> {
    fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, StageError> {
        (self.progress)(stage);
        let t0 = Instant::now();
        let r = f();
        self.timings.push(StageTiming { stage, seconds: t0.elapsed().as_secs_f64() });
        r.map_err(|error| StageError { stage, error })
    }
}

/// Turns the input into a local video file under `workdir`.
pub fn resolve_input(input: &InputSpec, workdir: &Path, fetcher: &Fetcher) -> Result<VideoSource> {
    match input {
        InputSpec::Path(p) => ingest::open_source(p),
        InputSpec::Url(u) => fetcher.fetch(u, workdir),
        InputSpec::Sample(name) => {
            let path = samples::materialize(name, workdir)?;
            let mut src = ingest::open_source(&path)?;
            src.uri = format!("sample:{name}");
            Ok(src)
        }
    }
}

/// Runs every stage and writes `page_NN.png` files into `out_dir`.
pub fn run_pipeline(
    input: &InputSpec,
    opts: &PipelineOptions,
    models: &ModelRegistry,
    workdir: &Path,
    out_dir: &Path,
    fetcher: &Fetcher,
) -> std::result::Result<PipelineOutput, StageError> {
    run_pipeline_with_progress(input, opts, models, workdir, out_dir, fetcher, &|_| {})
}

/// [`run_pipeline`] that reports each stage as it starts.
pub fn run_pipeline_with_progress(
    input: &InputSpec,
    opts: &PipelineOptions,
    models: &ModelRegistry,
    workdir: &Path,
    out_dir: &Path,
    fetcher: &Fetcher,
    progress: &dyn Fn(Stage),
) -> std::result::Result<PipelineOutput, StageError> {
    let mut clock = Clock { timings: Vec::new(), progress };
    clock.run(Stage::Validate, || {
        opts.validate()?;
        std::fs::create_dir_all(workdir).map_err(Error::io(workdir))?;
        std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))
    })?;
    let source = clock.run(Stage::Fetch, || resolve_input(input, workdir, fetcher))?;
    let frames = clock.run(Stage::Ingest, || ingest::sample_frames(&source, opts.sample_fps))?;
    let features = clock.run(Stage::Features, || extract_features(&frames, &models.extractor))?;
    let highlight = clock.run(Stage::Summarize, || {
        let policy = &models.dsn[&opts.frames_mode];
        let h = score_highlightness(&features, policy)?;
        Ok(h.probs.iter().map(|&p| p as f64).collect::<Vec<f64>>())
    })?;
    let n = clock.run(Stage::Segment, || opts.resolve_n(features.t()))?;
    let seg = clock.run(Stage::Segment, || segment(&features, n, &KtsConfig::default()))?;
    let keyframes = clock.run(Stage::Select, || {
        let backend = models.aesthetic(opts.aesthetic);
        select_keyframes(&seg, &highlight, n, opts.k, |t| {
            Ok(backend.score(&frames.frames[t], features.row(t))?.value)
        })
    })?;
    let panels = clock.run(Stage::Stylize, || {
        let g = &models.generators[&opts.style];
        Ok(keyframes.frame_indices.iter().map(|&t| stylize(&frames.frames[t], g)).collect::<Vec<_>>())
    })?;
    let pages = clock.run(Stage::Compose, || {
        let pages = compose(&panels, &opts.layout)?;
        let mut paths = Vec::with_capacity(pages.len());
        for p in &pages {
            let path = out_dir.join(format!("page_{:02}.png", p.page_index + 1));
            p.save_png(&path)?;
            paths.push(path);
        }
        Ok(paths)
    })?;
    let keyframe_times_s = keyframes.frame_indices.iter().map(|&t| frames.timestamps_s[t]).collect();
    Ok(PipelineOutput { source, n, k: opts.k, keyframes, keyframe_times_s, pages, timings: merge(clock.timings) })
}

/// Sums consecutive entries of the same stage.
fn merge(timings: Vec<StageTiming>) -> Vec<StageTiming> {
    let mut out: Vec<StageTiming> = Vec::new();
    for t in timings {
        match out.last_mut() {
            Some(last) if last.stage == t.stage => last.seconds += t.seconds,
            _ => out.push(t),
        }
    }
    out
}
