//! Per-frame descriptors.

mod googlenet;
mod stub;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use comixify_nn::manifest;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

pub use self::googlenet::{random_params as googlenet_random_params, GoogLeNet, INPUT_SIDE};
pub use self::stub::{describe as stub_descriptor, STUB_DIM};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::ingest::FrameSequence;

pub const STUB_ID: &str = "stub";

/// T×D descriptors, one L2-normalised row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f32>,
    /// Index of each row's frame in the source sequence.
    pub frame_index_map: Vec<usize>,
    pub extractor_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "D")]
    d: usize,
    extractor_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_index_map: Option<Vec<usize>>,
}

impl FeatureMatrix {
    /// Wraps raw rows without normalising them.
    pub fn new(data: Array2<f32>, extractor_id: impl Into<String>) -> Self {
        let frame_index_map = (0..data.nrows()).collect();
        FeatureMatrix { data, frame_index_map, extractor_id: extractor_id.into() }
    }

    pub fn from_rows(rows: &[Vec<f32>], extractor_id: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("feature rows differ in length".into()));
        }
        let flat = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat).expect("checked lengths");
        Ok(FeatureMatrix::new(data, extractor_id))
    }

    pub fn t(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f32> {
        self.data.row(t)
    }

    /// Writes `<stem>.f32` (row-major little-endian) and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let bin = stem.with_extension("f32");
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bin, bytes).map_err(Error::io(&bin))?;
        let header = Header {
            t: self.t(),
            d: self.d(),
            extractor_id: self.extractor_id.clone(),
            frame_index_map: Some(self.frame_index_map.clone()),
        };
        let json = stem.with_extension("json");
        fs::write(&json, serde_json::to_vec_pretty(&header)?).map_err(Error::io(&json))?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let json = stem.with_extension("json");
        let header: Header = serde_json::from_slice(&fs::read(&json).map_err(Error::io(&json))?)?;
        let bin = stem.with_extension("f32");
        let bytes = fs::read(&bin).map_err(Error::io(&bin))?;
        if bytes.len() != header.t * header.d * 4 {
            return Err(Error::Shape(format!(
                "{} holds {} bytes, header declares {}x{}",
                bin.display(),
                bytes.len(),
                header.t,
                header.d
            )));
        }
        let vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let data = Array2::from_shape_vec((header.t, header.d), vals).expect("size checked");
        let frame_index_map = header.frame_index_map.unwrap_or_else(|| (0..header.t).collect());
        if frame_index_map.len() != header.t {
            return Err(Error::Shape("frame_index_map length differs from T".into()));
        }
        Ok(FeatureMatrix { data, frame_index_map, extractor_id: header.extractor_id })
    }
}

#[derive(Clone)]
enum Backend {
    Stub,
    GoogLeNet(Arc<GoogLeNet>),
}

/// A loaded, immutable descriptor backend.
#[derive(Clone)]
pub struct FeatureExtractor {
    pub id: String,
    pub output_dim: usize,
    /// Manifest directory, or `"stub"`.
    pub weights_ref: String,
    backend: Backend,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("id", &self.id)
            .field("output_dim", &self.output_dim)
            .field("weights_ref", &self.weights_ref)
            .finish()
    }
}

impl FeatureExtractor {
    pub fn stub() -> Self {
        FeatureExtractor {
            id: STUB_ID.into(),
            output_dim: STUB_DIM,
            weights_ref: STUB_ID.into(),
            backend: Backend::Stub,
        }
    }

    pub fn googlenet(id: impl Into<String>, net: GoogLeNet, weights_ref: impl Into<String>) -> Self {
        FeatureExtractor {
            id: id.into(),
            output_dim: net.output_dim(),
            weights_ref: weights_ref.into(),
            backend: Backend::GoogLeNet(Arc::new(net)),
        }
    }

    /// Unnormalised descriptor of one frame.
    pub fn describe(&self, frame: &Frame) -> Vec<f32> {
        match &self.backend {
            Backend::Stub => stub::describe(frame).iter().map(|&v| v as f32).collect(),
            Backend::GoogLeNet(net) => net.describe(frame),
        }
    }
}

/// Loads a GoogLeNet-layout manifest directory; the literal `"stub"` selects
/// the analytic extractor.
pub fn load_extractor(manifest_path: &Path) -> Result<FeatureExtractor> {
    if manifest_path.as_os_str() == STUB_ID {
        return Ok(FeatureExtractor::stub());
    }
    let (m, params) = manifest::load::<f32>(manifest_path)?;
    let net = GoogLeNet::from_params(&params)?;
    Ok(FeatureExtractor::googlenet(m.name, net, manifest_path.display().to_string()))
}

fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 1e-12 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    } else {
        // An all-zero descriptor has no direction; use the uniform one.
        let u = (1.0 / v.len() as f64).sqrt() as f32;
        v.iter_mut().for_each(|x| *x = u);
    }
}

pub fn extract_from_frames(frames: &[Frame], extractor: &FeatureExtractor) -> Result<FeatureMatrix> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to describe".into()));
    }
    let mut data = Array2::zeros((frames.len(), extractor.output_dim));
    for (t, f) in frames.iter().enumerate() {
        let mut d = extractor.describe(f);
        if d.len() != extractor.output_dim || d.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelLoad(format!("extractor `{}` produced an invalid descriptor", extractor.id)));
        }
        l2_normalize(&mut d);
        data.row_mut(t).assign(&ArrayView1::from(&d));
    }
    Ok(FeatureMatrix::new(data, extractor.id.clone()))
}

pub fn extract_features(frames: &FrameSequence, extractor: &FeatureExtractor) -> Result<FeatureMatrix> {
    extract_from_frames(&frames.frames, extractor)
}
