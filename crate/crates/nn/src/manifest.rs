//! Weight manifests: the portable on-disk container for model parameters.
//!
//! A manifest is a directory holding `manifest.json` and one raw
//! little-endian `f32` file per tensor:
//!
//! ```json
//! {
//!   "name": "dsn_basic",
//!   "tensors": [
//!     {"name": "lstm.fwd.w_ih", "dtype": "f32", "shape": [1024, 1024],
//!      "file": "lstm.fwd.w_ih.bin", "sha256": "…"}
//!   ]
//! }
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::params::ParamStore;
use crate::Float;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest I/O error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed manifest {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("tensor `{tensor}`: unsupported dtype `{dtype}` (only f32)")]
    Dtype { tensor: String, dtype: String },
    #[error("tensor `{tensor}`: checksum mismatch")]
    Checksum { tensor: String },
    #[error("tensor `{tensor}`: file holds {found} bytes, shape needs {expected}")]
    Size { tensor: String, expected: usize, found: usize },
    #[error("tensor `{0}` missing from manifest")]
    MissingTensor(String),
    #[error("tensor `{tensor}`: expected shape {expected:?}, found {found:?}")]
    Shape { tensor: String, expected: Vec<usize>, found: Vec<usize> },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io { path: path.to_path_buf(), source }
}

fn file_name_for(tensor: &str) -> String {
    let safe: String = tensor
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}.bin")
}

/// Writes `params` as a manifest directory named `name` under `dir`.
pub fn save<F: Float>(dir: &Path, name: &str, params: &ParamStore<F>) -> Result<Manifest, ManifestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tensors = Vec::with_capacity(params.len());
    for (tname, t) in params.iter() {
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for v in t.as_standard_layout().iter() {
            let f = num_traits::ToPrimitive::to_f32(v).unwrap_or(f32::NAN);
            bytes.extend_from_slice(&f.to_le_bytes());
        }
        let file = file_name_for(tname);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        tensors.push(TensorEntry {
            name: tname.to_string(),
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            file,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest { name: name.to_string(), tensors };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|source| ManifestError::Json { path: path.clone(), source })?;
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Reads only `manifest.json`, without touching tensor files.
pub fn read_manifest(dir: &Path) -> Result<Manifest, ManifestError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&bytes).map_err(|source| ManifestError::Json { path, source })
}

/// Loads and verifies every tensor of the manifest in `dir`.
pub fn load<F: Float>(dir: &Path) -> Result<(Manifest, ParamStore<F>), ManifestError> {
    let manifest = read_manifest(dir)?;
    let mut params = ParamStore::new();
    for entry in &manifest.tensors {
        if entry.dtype != "f32" {
            return Err(ManifestError::Dtype { tensor: entry.name.clone(), dtype: entry.dtype.clone() });
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256.to_ascii_lowercase() {
            return Err(ManifestError::Checksum { tensor: entry.name.clone() });
        }
        let count: usize = entry.shape.iter().product();
        if bytes.len() != count * 4 {
            return Err(ManifestError::Size {
                tensor: entry.name.clone(),
                expected: count * 4,
                found: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| F::c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), data).expect("size checked");
        params.insert(entry.name.clone(), arr);
    }
    Ok((manifest, params))
}

/// Checks that `params` has every tensor named in `expected` with the given shape.
pub fn expect_shapes<F: Float>(
    params: &ParamStore<F>,
    expected: &[(String, Vec<usize>)],
) -> Result<(), ManifestError> {
    for (name, shape) in expected {
        let t = params.get(name).ok_or_else(|| ManifestError::MissingTensor(name.clone()))?;
        if t.shape() != shape.as_slice() {
            return Err(ManifestError::Shape {
                tensor: name.clone(),
                expected: shape.clone(),
                found: t.shape().to_vec(),
            });
        }
    }
    Ok(())
}
