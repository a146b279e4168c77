//! Perceptual losses on vectorised feature maps.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activations of one layer as an `N × M` matrix: `N` filters, `M` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: DMatrix<f64>,
    pub layer_id: String,
}

impl FeatureMap {
    pub fn new(values: DMatrix<f64>, layer_id: impl Into<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape("feature map needs at least one filter and one position".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature map has non-finite entries".into()));
        }
        Ok(FeatureMap { values, layer_id: layer_id.into() })
    }

    /// Builds from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>], layer_id: impl Into<String>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), m, &flat), layer_id)
    }

    pub fn filters(&self) -> usize {
        self.values.nrows()
    }

    pub fn positions(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub g: DMatrix<f64>,
    pub source_layer: String,
    /// Positions of the feature map the matrix was built from.
    pub positions: usize,
}

pub fn gram_matrix(f: &FeatureMap) -> GramMatrix {
    let g = &f.values * f.values.transpose();
    // exact symmetry regardless of summation order
    let g = (&g + g.transpose()) * 0.5;
    GramMatrix { g, source_layer: f.layer_id.clone(), positions: f.positions() }
}

/// `½ Σ (F − P)²`.
pub fn content_loss(f: &FeatureMap, p: &FeatureMap) -> Result<f64> {
    if f.values.shape() != p.values.shape() {
        return Err(Error::Shape(format!(
            "content features {:?} vs {:?}",
            f.values.shape(),
            p.values.shape()
        )));
    }
    Ok(0.5 * (&f.values - &p.values).iter().map(|d| d * d).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleLossConfig {
    pub layer_weights: Vec<f64>,
    pub content_weight: f64,
    pub style_weight: f64,
}

impl StyleLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("layer weights must be finite and nonnegative".into()));
        }
        if !self.layer_weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Domain("at least one layer weight must be positive".into()));
        }
        Ok(())
    }
}

/// `½ Σ_l ω_l E_l` with `E_l = Σ (G − A)² / (4 N² M²)`.
pub fn style_loss(a: &[GramMatrix], b: &[GramMatrix], cfg: &StyleLossConfig) -> Result<f64> {
    cfg.validate()?;
    if a.len() != b.len() || a.len() != cfg.layer_weights.len() {
        return Err(Error::Shape(format!(
            "style layers: {} vs {} grams, {} weights",
            a.len(),
            b.len(),
            cfg.layer_weights.len()
        )));
    }
    let mut total = 0.0;
    for ((g, s), &w) in a.iter().zip(b).zip(&cfg.layer_weights) {
        if g.g.shape() != s.g.shape() || g.source_layer != s.source_layer {
            return Err(Error::Shape(format!(
                "layer `{}` {:?} vs `{}` {:?}",
                g.source_layer,
                g.g.shape(),
                s.source_layer,
                s.g.shape()
            )));
        }
        let n = g.g.nrows() as f64;
        let m = g.positions as f64;
        let e = (&g.g - &s.g).iter().map(|d| d * d).sum::<f64>() / (4.0 * n * n * m * m);
        total += w * e;
    }
    Ok(0.5 * total)
}

/// `α·Lc + β·Ls`.
pub fn total_loss(lc: f64, ls: f64, cfg: &StyleLossConfig) -> f64 {
    cfg.content_weight * lc + cfg.style_weight * ls
}
