//! Kernel temporal segmentation with a lower bound on the segment count.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Symmetric PSD Gram matrix of frame descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub k: Array2<f64>,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.nrows() == 0
    }
}

/// Linear kernel `K = X Xᵀ`.
pub fn kernel_matrix(features: &FeatureMatrix) -> Result<KernelMatrix> {
    if features.t() == 0 {
        return Err(Error::EmptyInput("no frames to segment".into()));
    }
    let x = features.data.mapv(f64::from);
    Ok(KernelMatrix { k: x.dot(&x.t()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub change_points: Vec<usize>,
    pub cost: f64,
    /// Number of segments.
    pub m: usize,
    /// Number of frames.
    #[serde(rename = "T")]
    pub t: usize,
}

impl Segmentation {
    /// `[start, end)` ranges partitioning `0..T`.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut bounds = Vec::with_capacity(self.m + 1);
        bounds.push(0);
        bounds.extend_from_slice(&self.change_points);
        bounds.push(self.t);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// O(1) within-segment scatter from prefix sums of the kernel:
/// `scatter(a, b) = Σ_{t∈[a,b)} K[t][t] − (1/(b−a)) Σ_{s,t∈[a,b)} K[s][t]`.
#[derive(Debug, Clone)]
pub struct SegmentCost {
    diag: Vec<f64>,
    /// `block[i][j] = Σ_{s<i, t<j} K[s][t]`, `(T+1)²` entries.
    block: Array2<f64>,
}

impl SegmentCost {
    pub fn new(k: &KernelMatrix) -> Self {
        let t = k.len();
        let mut diag = vec![0.0; t + 1];
        for i in 0..t {
            diag[i + 1] = diag[i] + k.k[[i, i]];
        }
        let mut block = Array2::zeros((t + 1, t + 1));
        for i in 0..t {
            for j in 0..t {
                block[[i + 1, j + 1]] = k.k[[i, j]] + block[[i, j + 1]] + block[[i + 1, j]] - block[[i, j]];
            }
        }
        SegmentCost { diag, block }
    }

    pub fn len(&self) -> usize {
        self.diag.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scatter of frames `[a, b)`, clamped at 0 against rounding.
    pub fn scatter(&self, a: usize, b: usize) -> f64 {
        debug_assert!(a < b && b <= self.len());
        let s = &self.block;
        let within = s[[b, b]] - s[[a, b]] - s[[b, a]] + s[[a, a]];
        (self.diag[b] - self.diag[a] - within / (b - a) as f64).max(0.0)
    }
}

/// Optimal costs for every segment count up to `m_max`.
///
/// `suffix[k-1][a]` is the least cost of cutting frames `[a, T)` into `k`
/// segments, built as `scatter(a, b) + suffix[k-2][b]`, so a segmentation's
/// cost is always summed right to left: `s_0 + (s_1 + (… + s_{m-1}))`.
struct Dp {
    cost: SegmentCost,
    suffix: Vec<Vec<f64>>,
}

impl Dp {
    fn new(k: &KernelMatrix, m_max: usize) -> Dp {
        let cost = SegmentCost::new(k);
        let t = cost.len();
        let mut suffix = vec![vec![f64::INFINITY; t + 1]; m_max];
        for a in 0..t {
            suffix[0][a] = cost.scatter(a, t);
        }
        for k in 2..=m_max {
            // need at least k frames in [a, T)
            for a in 0..=t - k {
                let mut best = f64::INFINITY;
                for b in a + 1..=t - (k - 1) {
                    let c = cost.scatter(a, b) + suffix[k - 2][b];
                    if c < best {
                        best = c;
                    }
                }
                suffix[k - 1][a] = best;
            }
        }
        Dp { cost, suffix }
    }

    /// Rebuilds the lexicographically smallest optimal change-point list by
    /// taking the earliest boundary that attains the optimum at each step.
    fn segmentation(&self, m: usize) -> Segmentation {
        let t = self.cost.len();
        let mut cps = Vec::with_capacity(m - 1);
        let mut a = 0;
        for k in (2..=m).rev() {
            let target = self.suffix[k - 1][a];
            let b = (a + 1..=t - (k - 1))
                .find(|&b| self.cost.scatter(a, b) + self.suffix[k - 2][b] == target)
                .expect("optimum is attained");
            cps.push(b);
            a = b;
        }
        Segmentation { change_points: cps, cost: self.suffix[m - 1][0], m, t }
    }
}

/// Exact minimum-scatter segmentation into exactly `m` segments.
pub fn optimal_m_segmentation(k: &KernelMatrix, m: usize) -> Result<Segmentation> {
    if m < 1 || m > k.len() {
        return Err(Error::Constraint(format!("segment count {m} outside 1..={}", k.len())));
    }
    Ok(Dp::new(k, m).segmentation(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KtsConfig {
    /// Weight of the `m·ln(T/m)` model-size penalty.
    pub lambda: f64,
    /// Largest segment count considered; `None` means `max(n, min(T, ceil(T/5)))`.
    pub max_segments: Option<usize>,
}

impl Default for KtsConfig {
    fn default() -> Self {
        KtsConfig { lambda: 1.0, max_segments: None }
    }
}

pub fn default_max_segments(t: usize, n: usize) -> usize {
    n.max(t.min(t.div_ceil(5)))
}

/// Segments into `m ∈ [n, m_max]` parts, choosing `m` by
/// `cost(m) + λ·m·ln(T/m)` with ties going to the smaller `m`.
pub fn segment(features: &FeatureMatrix, min_segments: usize, cfg: &KtsConfig) -> Result<Segmentation> {
    let k = kernel_matrix(features)?;
    segment_kernel(&k, min_segments, cfg)
}

pub fn segment_kernel(k: &KernelMatrix, n: usize, cfg: &KtsConfig) -> Result<Segmentation> {
    let t = k.len();
    if n < 1 || n > t {
        return Err(Error::Constraint(format!("minimum segment count {n} outside 1..={t}")));
    }
    let m_max = cfg.max_segments.unwrap_or_else(|| default_max_segments(t, n));
    if m_max < n || m_max > t {
        return Err(Error::Constraint(format!("maximum segment count {m_max} outside {n}..={t}")));
    }
    let dp = Dp::new(k, m_max);
    let mut best: Option<(f64, usize)> = None;
    for m in n..=m_max {
        let score = dp.suffix[m - 1][0] + cfg.lambda * m as f64 * (t as f64 / m as f64).ln();
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, m));
        }
    }
    let (_, m) = best.expect("n <= m_max");
    Ok(dp.segmentation(m))
}
