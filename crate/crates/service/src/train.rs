//! `comixify train`: reads a config file, trains one model, writes its
//! weight manifest and a JSON-lines loss log.
//!
//! Configs are TOML when the file ends in `.toml` and JSON otherwise.
//! Trainer hyperparameters go in a `train` table; everything else is
//! top-level. Unknown top-level keys are rejected.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use comixify_core::aesthetics::{
    popularity_label, spearman, train_quality_model, train_svr, QualityTrainConfig, RatingDistribution, SvrConfig,
    BINS,
};
use comixify_core::features::{extract_features, load_extractor, FeatureExtractor, FeatureMatrix};
use comixify_core::ingest;
use comixify_core::styletransfer::{train_comixgan, write_loss_log, ContentNet, GanTrainConfig, TrainingTriplet};
use comixify_core::summarizer::{train_dsn, write_reward_log, DsnTrainConfig};
use comixify_core::Frame;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainKind {
    Dsn,
    Comixgan,
    Nima,
    Popularity,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Run(#[from] comixify_core::Error),
}

impl TrainError {
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::Schema(_) => 2,
            TrainError::Run(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, TrainError>;

fn schema(msg: impl Into<String>) -> TrainError {
    TrainError::Schema(msg.into())
}

fn stub() -> String {
    "stub".into()
}

fn default_fps() -> f64 {
    ingest::DEFAULT_SAMPLE_FPS
}

fn default_size() -> u32 {
    64
}

fn default_content_width() -> usize {
    16
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsnJob {
    /// Saved feature matrices (`<stem>.json` + `<stem>.f32`) and/or videos.
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    /// Used for videos in the corpus: `"stub"` or a manifest directory.
    #[serde(default = "stub")]
    pub extractor: String,
    #[serde(default = "default_fps")]
    pub sample_fps: f64,
    #[serde(default)]
    pub train: DsnTrainConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComixganJob {
    pub photos: PathBuf,
    pub comics: PathBuf,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    /// Images are centre-cropped to `size × size`; must be a multiple of 4.
    #[serde(default = "default_size")]
    pub size: u32,
    /// Content network manifest; without one a seeded network of
    /// `content_width` channels is used.
    pub content: Option<PathBuf>,
    #[serde(default = "default_content_width")]
    pub content_width: usize,
    #[serde(default)]
    pub train: GanTrainConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NimaJob {
    pub corpus: PathBuf,
    /// JSON object: image file name → 10 rating counts or frequencies.
    pub labels: PathBuf,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    #[serde(default)]
    pub train: QualityTrainConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopularityJob {
    pub corpus: PathBuf,
    /// JSON object: image file name → `{"views": u64, "followers": u64}`.
    pub labels: PathBuf,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    #[serde(default = "stub")]
    pub extractor: String,
    #[serde(default)]
    pub train: SvrConfig,
}

#[derive(Debug, Deserialize)]
struct Engagement {
    views: u64,
    followers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub manifest_dir: PathBuf,
    pub log: PathBuf,
    pub detail: String,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| schema(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| schema(format!("{}: {e}", path.display())))
    }
}

/// Relative paths in a config resolve against the config's directory.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_dir(key: &str, p: &Path) -> Result<()> {
    if !p.is_dir() {
        return Err(schema(format!("`{key}` path {} is not a directory", p.display())));
    }
    Ok(())
}

fn require_file(key: &str, p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(schema(format!("`{key}` path {} is not a file", p.display())));
    }
    Ok(())
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(comixify_core::Error::io(dir))? {
        let p = e.map_err(comixify_core::Error::io(dir))?.path();
        if p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn load_image(p: &Path) -> Result<Frame> {
    let img = image::open(p).map_err(|e| comixify_core::Error::Decode { path: p.into(), reason: e.to_string() })?;
    Ok(Frame::from_rgb8(&img.to_rgb8()))
}

fn load_images(dir: &Path) -> Result<Vec<(String, Frame)>> {
    let mut out = Vec::new();
    for p in sorted_files(dir)?.into_iter().filter(|p| is_image(p)) {
        let name = p.file_name().expect("file").to_string_lossy().into_owned();
        out.push((name, load_image(&p)?));
    }
    Ok(out)
}

fn extractor(spec: &str, base: &Path) -> Result<FeatureExtractor> {
    if spec == "stub" {
        return Ok(FeatureExtractor::stub());
    }
    let dir = resolve(base, Path::new(spec));
    require_dir("extractor", &dir)?;
    Ok(load_extractor(&dir)?)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(comixify_core::Error::io(path))?;
    for r in rows {
        let line = serde_json::to_string(r).map_err(comixify_core::Error::from)?;
        writeln!(f, "{line}").map_err(comixify_core::Error::io(path))?;
    }
    Ok(())
}

fn prepare_out(out: &Path, log: Option<&PathBuf>, base: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(comixify_core::Error::io(out))?;
    Ok(log.map_or_else(|| out.join("loss.jsonl"), |l| resolve(base, l)))
}

pub fn run(kind: TrainKind, config: &Path) -> Result<TrainSummary> {
    if !config.is_file() {
        return Err(schema(format!("config file {} does not exist", config.display())));
    }
    let base = config.parent().unwrap_or(Path::new("."));
    match kind {
        TrainKind::Dsn => dsn(read_config(config)?, base),
        TrainKind::Comixgan => comixgan(read_config(config)?, base),
        TrainKind::Nima => nima(read_config(config)?, base),
        TrainKind::Popularity => popularity(read_config(config)?, base),
    }
}

fn dsn(job: DsnJob, base: &Path) -> Result<TrainSummary> {
    let corpus_dir = resolve(base, &job.corpus);
    require_dir("corpus", &corpus_dir)?;
    if !(job.sample_fps > 0.0) {
        return Err(schema("`sample_fps` must be positive"));
    }
    let mut corpus = Vec::new();
    let mut ext = None;
    for p in sorted_files(&corpus_dir)? {
        match p.extension().and_then(|e| e.to_str()) {
            Some("json") if p.with_extension("f32").is_file() => corpus.push(FeatureMatrix::load(&p.with_extension(""))?),
            Some("json" | "f32") => {}
            _ => {
                if ext.is_none() {
                    ext = Some(extractor(&job.extractor, base)?);
                }
                let src = ingest::open_source(&p)?;
                let frames = ingest::sample_frames(&src, job.sample_fps)?;
                corpus.push(extract_features(&frames, ext.as_ref().expect("set above"))?);
            }
        }
    }
    if corpus.is_empty() {
        return Err(schema(format!("corpus {} holds no feature matrices or videos", corpus_dir.display())));
    }
    let out = resolve(base, &job.out);
    let log_path = prepare_out(&out, job.log.as_ref(), base)?;
    let (policy, log) = train_dsn(&corpus, &job.train, None)?;
    policy.save(&out, "dsn")?;
    write_reward_log(&log_path, &log)?;
    let last = log.last().map_or(f64::NAN, |e| e.mean_reward);
    Ok(TrainSummary {
        manifest_dir: out,
        log: log_path,
        detail: format!("{} videos, {} epochs, final mean reward {last:.4}", corpus.len(), log.len()),
    })
}

fn comixgan(job: ComixganJob, base: &Path) -> Result<TrainSummary> {
    let photos_dir = resolve(base, &job.photos);
    let comics_dir = resolve(base, &job.comics);
    require_dir("photos", &photos_dir)?;
    require_dir("comics", &comics_dir)?;
    if job.size < 8 || job.size % 4 != 0 {
        return Err(schema(format!("`size` must be a multiple of 4 and at least 8, got {}", job.size)));
    }
    if job.train.checkpoint_dir.is_some() {
        return Err(schema("set `out`; checkpoints go to <out>/checkpoints when `checkpoint_every` > 0"));
    }
    let crop = |v: Vec<(String, Frame)>| v.into_iter().map(|(_, f)| f.resize_center_crop(job.size)).collect::<Vec<_>>();
    let photos = crop(load_images(&photos_dir)?);
    let comics = crop(load_images(&comics_dir)?);
    if photos.is_empty() || comics.is_empty() {
        return Err(schema("`photos` and `comics` must each contain at least one PNG or JPEG image"));
    }
    let content = match &job.content {
        Some(p) => {
            let dir = resolve(base, p);
            require_dir("content", &dir)?;
            ContentNet::load(&dir)?
        }
        None => ContentNet::random(job.content_width, job.train.seed.wrapping_add(7)),
    };
    let out = resolve(base, &job.out);
    let log_path = prepare_out(&out, job.log.as_ref(), base)?;
    let mut cfg = job.train.clone();
    if cfg.checkpoint_every > 0 {
        cfg.checkpoint_dir = Some(out.join("checkpoints"));
    }
    let triplet = TrainingTriplet::new(photos, comics)?;
    let run = train_comixgan(&triplet, &content, &cfg, None)?;
    run.generator.save(&out)?;
    run.discriminator.save(&out.join("discriminator"))?;
    write_loss_log(&out.join("pretrain_loss.jsonl"), &run.pretrain_log)?;
    write_loss_log(&log_path, &run.log)?;
    Ok(TrainSummary {
        manifest_dir: out,
        log: log_path,
        detail: format!("{} generator and {} discriminator steps", run.generator_steps, run.discriminator_steps),
    })
}

fn read_labels<T: DeserializeOwned>(path: &Path) -> Result<std::collections::BTreeMap<String, T>> {
    require_file("labels", path)?;
    let text = fs::read_to_string(path).map_err(comixify_core::Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| schema(format!("labels {}: {e}", path.display())))
}

fn labelled<T>(images: Vec<(String, Frame)>, mut labels: std::collections::BTreeMap<String, T>) -> Result<Vec<(Frame, T)>> {
    let mut out = Vec::with_capacity(images.len());
    for (name, frame) in images {
        let label = labels.remove(&name).ok_or_else(|| schema(format!("image `{name}` has no label")))?;
        out.push((frame, label));
    }
    if let Some(name) = labels.keys().next() {
        return Err(schema(format!("label `{name}` has no image in the corpus")));
    }
    Ok(out)
}

fn nima(job: NimaJob, base: &Path) -> Result<TrainSummary> {
    let corpus_dir = resolve(base, &job.corpus);
    require_dir("corpus", &corpus_dir)?;
    let labels: std::collections::BTreeMap<String, Vec<f64>> = read_labels(&resolve(base, &job.labels))?;
    let mut corpus = Vec::new();
    for (frame, counts) in labelled(load_images(&corpus_dir)?, labels)? {
        let total: f64 = counts.iter().sum();
        if counts.len() != BINS || counts.iter().any(|c| !c.is_finite() || *c < 0.0) || !(total > 0.0) {
            return Err(schema(format!("rating labels need {BINS} nonnegative values with a positive sum")));
        }
        let mut p = [0.0; BINS];
        p.iter_mut().zip(&counts).for_each(|(d, c)| *d = c / total);
        corpus.push((frame, RatingDistribution { p }));
    }
    if corpus.is_empty() {
        return Err(schema(format!("corpus {} holds no images", corpus_dir.display())));
    }
    let out = resolve(base, &job.out);
    let log_path = prepare_out(&out, job.log.as_ref(), base)?;
    let (model, log) = train_quality_model(&corpus, &job.train)?;
    model.save(&out, "nima")?;
    write_jsonl(&log_path, &log)?;
    let last = log.last().map_or(f64::NAN, |s| s.loss);
    Ok(TrainSummary {
        manifest_dir: out,
        log: log_path,
        detail: format!("{} images, {} steps, final EMD {last:.4}", corpus.len(), log.len()),
    })
}

#[derive(Serialize)]
struct SvrReport {
    samples: usize,
    support_vectors: usize,
    train_spearman: f64,
}

fn popularity(job: PopularityJob, base: &Path) -> Result<TrainSummary> {
    let corpus_dir = resolve(base, &job.corpus);
    require_dir("corpus", &corpus_dir)?;
    let labels: std::collections::BTreeMap<String, Engagement> = read_labels(&resolve(base, &job.labels))?;
    let ext = extractor(&job.extractor, base)?;
    let rows = labelled(load_images(&corpus_dir)?, labels)?;
    if rows.len() < 2 {
        return Err(schema("popularity training needs at least 2 labelled images"));
    }
    let d = ext.output_dim;
    let mut x = ndarray::Array2::zeros((rows.len(), d));
    let mut y = Vec::with_capacity(rows.len());
    for (i, (frame, e)) in rows.iter().enumerate() {
        for (j, v) in ext.describe(frame).into_iter().enumerate() {
            x[[i, j]] = v as f64;
        }
        y.push(popularity_label(e.views, e.followers)?);
    }
    let out = resolve(base, &job.out);
    let log_path = prepare_out(&out, job.log.as_ref(), base)?;
    let model = train_svr(&x, &y, &job.train)?;
    model.save(&out, "popularity")?;
    let pred: Vec<f64> = x.rows().into_iter().map(|r| model.predict(r)).collect();
    let rho = spearman(&pred, &y).unwrap_or(0.0);
    let report = SvrReport { samples: rows.len(), support_vectors: model.support.nrows(), train_spearman: rho };
    write_jsonl(&log_path, &[report])?;
    Ok(TrainSummary {
        manifest_dir: out,
        log: log_path,
        detail: format!("{} images, {} support vectors, train Spearman {rho:.3}", rows.len(), model.support.nrows()),
    })
}
