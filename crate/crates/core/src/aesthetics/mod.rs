//! Frame aesthetics: a popularity regressor and a rating-distribution model.

mod nima;
mod svr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

pub use self::nima::{
    corpus_emd, emd_loss_var, predict_rating_distribution, quality_logits, train_quality_model, QualityModel,
    QualityTrainConfig, StepLoss, QUALITY_INPUT,
};
pub use self::svr::{train_svr, SvrConfig, SvrModel};

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const BINS: usize = 10;

/// `ln((viewcount + 1) / followers)`.
pub fn popularity_label(viewcount: u64, followers: u64) -> Result<f64> {
    if followers < 1 {
        return Err(Error::Domain("followers must be at least 1".into()));
    }
    Ok(((viewcount as f64 + 1.0) / followers as f64).ln())
}

/// Histogram over ratings 1..=10.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingDistribution {
    pub p: [f64; BINS],
}

impl RatingDistribution {
    pub fn uniform() -> Self {
        RatingDistribution { p: [0.1; BINS] }
    }

    /// All mass on `rating` (1-based).
    pub fn one_hot(rating: usize) -> Self {
        let mut p = [0.0; BINS];
        p[rating - 1] = 1.0;
        RatingDistribution { p }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("rating distribution has negative or non-finite mass".into()));
        }
        let s: f64 = self.p.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("rating distribution sums to {s}")));
        }
        Ok(())
    }
}

/// `((1/10) Σ_k |CDF_p(k) − CDF_q(k)|^r)^{1/r}`.
pub fn emd_loss(p: &RatingDistribution, q: &RatingDistribution, r: f64) -> Result<f64> {
    p.validate()?;
    q.validate()?;
    let (mut cp, mut cq, mut acc) = (0.0, 0.0, 0.0);
    for k in 0..BINS {
        cp += p.p[k];
        cq += q.p[k];
        acc += (cp - cq).abs().powf(r);
    }
    Ok((acc / BINS as f64).powf(1.0 / r))
}

/// Expected rating `Σ k·p[k]`.
pub fn mean_score(p: &RatingDistribution) -> f64 {
    p.p.iter().enumerate().map(|(k, v)| (k + 1) as f64 * v).sum()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. A constant input
/// has no rank variance and yields 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Precondition("spearman needs at least 2 pairs".into()));
    }
    let (ra, rb) = (Array1::from(ranks(a)), Array1::from(ranks(b)));
    let (da, db) = (&ra - ra.mean().unwrap_or(0.0), &rb - rb.mean().unwrap_or(0.0));
    let (va, vb) = (da.dot(&da), db.dot(&db));
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok((da.dot(&db) / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AestheticKind {
    Popularity,
    Nima,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AestheticScore {
    pub value: f64,
    pub backend: AestheticKind,
}

/// Common interface the selector consumes.
pub trait AestheticBackend: Send + Sync {
    fn kind(&self) -> AestheticKind;

    /// Scores a frame; `descriptor` is the frame's feature row.
    fn score(&self, frame: &Frame, descriptor: ArrayView1<f32>) -> Result<AestheticScore>;
}

/// SVR over frame descriptors.
pub struct PopularityBackend {
    pub model: SvrModel,
}

impl AestheticBackend for PopularityBackend {
    fn kind(&self) -> AestheticKind {
        AestheticKind::Popularity
    }

    fn score(&self, _frame: &Frame, descriptor: ArrayView1<f32>) -> Result<AestheticScore> {
        if descriptor.len() != self.model.dim() {
            return Err(Error::Shape(format!(
                "popularity model expects {}-d descriptors, got {}",
                self.model.dim(),
                descriptor.len()
            )));
        }
        let x = descriptor.mapv(f64::from);
        Ok(AestheticScore { value: self.model.predict(x.view()), backend: AestheticKind::Popularity })
    }
}

/// Mean of the predicted rating histogram.
pub struct NimaBackend {
    pub model: QualityModel,
}

impl AestheticBackend for NimaBackend {
    fn kind(&self) -> AestheticKind {
        AestheticKind::Nima
    }

    fn score(&self, frame: &Frame, _descriptor: ArrayView1<f32>) -> Result<AestheticScore> {
        let d = predict_rating_distribution(frame, &self.model);
        Ok(AestheticScore { value: mean_score(&d), backend: AestheticKind::Nima })
    }
}
