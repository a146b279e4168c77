//! Feature-statistics transforms for encoder/decoder style transfer.
//!
//! Both functions act on encoder activations only. A caller encodes content
//! and style images with the same encoder, transforms the content features
//! here and decodes the result with its own decoder.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::losses::FeatureMap;
use crate::error::{Error, Result};

pub const ADAIN_EPS: f64 = 1e-5;
pub const WCT_EIG_FLOOR: f64 = 1e-8;

fn row_mean_std(m: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = m.ncols() as f64;
    let mean = DVector::from_fn(m.nrows(), |i, _| m.row(i).sum() / n);
    let std = DVector::from_fn(m.nrows(), |i, _| {
        let mu = mean[i];
        (m.row(i).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt()
    });
    (mean, std)
}

fn same_channels(c: &FeatureMap, s: &FeatureMap) -> Result<()> {
    if c.filters() != s.filters() {
        return Err(Error::Shape(format!("content has {} channels, style {}", c.filters(), s.filters())));
    }
    Ok(())
}

/// Per channel: `σ_s (x − μ_c) / (σ_c + ε) + μ_s` with population statistics.
pub fn adain(content: &FeatureMap, style: &FeatureMap) -> Result<FeatureMap> {
    same_channels(content, style)?;
    let (mc, sc) = row_mean_std(&content.values);
    let (ms, ss) = row_mean_std(&style.values);
    let mut out = content.values.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let k = ss[i] / (sc[i] + ADAIN_EPS);
        row.apply(|v| *v = k * (*v - mc[i]) + ms[i]);
    }
    Ok(FeatureMap { values: out, layer_id: content.layer_id.clone() })
}

fn centered_cov(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.ncols();
    let mean = DVector::from_fn(m.nrows(), |i, _| m.row(i).sum() / n as f64);
    let mut c = m.clone();
    for (i, mut row) in c.row_iter_mut().enumerate() {
        row.add_scalar_mut(-mean[i]);
    }
    (c, mean)
}

fn covariance(centered: &DMatrix<f64>) -> DMatrix<f64> {
    let cov = centered * centered.transpose() / (centered.ncols() - 1) as f64;
    (&cov + cov.transpose()) * 0.5
}

fn eig_power(cov: DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Whitens the content covariance, colours it with the style covariance and
/// adds the style mean. Eigenvalues below the floor are clamped to it, so
/// rank-deficient content directions stay finite.
pub fn wct(content: &FeatureMap, style: &FeatureMap) -> Result<FeatureMap> {
    same_channels(content, style)?;
    if content.positions() < 2 || style.positions() < 2 {
        return Err(Error::Shape("whitening needs at least two positions".into()));
    }
    let (xc, _) = centered_cov(&content.values);
    let (xs, mu_s) = centered_cov(&style.values);
    let whiten = eig_power(covariance(&xc), |l| 1.0 / l.max(WCT_EIG_FLOOR).sqrt());
    let color = eig_power(covariance(&xs), |l| l.max(0.0).sqrt());
    let mut out = color * whiten * xc;
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row.add_scalar_mut(mu_s[i]);
    }
    Ok(FeatureMap { values: out, layer_id: content.layer_id.clone() })
}

/// Sample covariance with `1/(M−1)`, for checking transform outputs.
pub fn feature_covariance(f: &FeatureMap) -> DMatrix<f64> {
    covariance(&centered_cov(&f.values).0)
}
