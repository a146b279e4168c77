//! Keyframe choice from segments, highlightness and aesthetics.
//!
//! Every tie goes to the earlier segment or frame.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::aesthetics::AestheticBackend;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::frame::Frame;
use crate::kts::{segment, KtsConfig, Segmentation};
use crate::summarizer::{score_highlightness, DsnPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub segment_id: usize,
    pub highlight_score: f64,
    pub aesthetic_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub frame_indices: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

fn mean(scores: &[f64], (a, b): (usize, usize)) -> f64 {
    scores[a..b].iter().sum::<f64>() / (b - a) as f64
}

/// Indices (into `segments`) of the `n` segments with the highest mean
/// score, in temporal order.
pub fn top_segment_ids(segments: &[(usize, usize)], scores: &[f64], n: usize) -> Result<Vec<usize>> {
    if n > segments.len() {
        return Err(Error::Constraint(format!("asked for {n} segments, only {} exist", segments.len())));
    }
    if let Some(&(_, end)) = segments.last() {
        if end > scores.len() {
            return Err(Error::Shape(format!("segments reach frame {end}, only {} scores", scores.len())));
        }
    }
    let means: Vec<f64> = segments.iter().map(|&s| mean(scores, s)).collect();
    let mut ids: Vec<usize> = (0..segments.len()).collect();
    // stable sort keeps earlier segments first among equal means
    ids.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
    ids.truncate(n);
    ids.sort_unstable();
    Ok(ids)
}

pub fn select_top_segments(seg: &Segmentation, scores: &[f64], n: usize) -> Result<Vec<(usize, usize)>> {
    let segments = seg.segments();
    Ok(top_segment_ids(&segments, scores, n)?.into_iter().map(|i| segments[i]).collect())
}

/// Earliest argmax of `values`.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Highest-scoring frame of each segment.
pub fn pick_segment_peaks(segments: &[(usize, usize)], scores: &[f64]) -> Vec<usize> {
    let mut peaks: Vec<usize> = segments
        .iter()
        .map(|&(a, b)| a + argmax(scores[a..b].iter().copied()))
        .collect();
    peaks.sort_unstable();
    peaks
}

/// Positions (into `frames`) kept after splitting the `n` candidates into
/// `k` contiguous groups and taking each group's most aesthetic member.
pub fn aesthetic_filter(frames: &[usize], aesthetic: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = frames.len();
    if k == 0 || n % k != 0 {
        return Err(Error::Constraint(format!("k={k} must divide n={n}")));
    }
    if aesthetic.len() != n {
        return Err(Error::Shape(format!("{n} candidates but {} aesthetic scores", aesthetic.len())));
    }
    let g = n / k;
    Ok((0..k).map(|j| j * g + argmax(aesthetic[j * g..(j + 1) * g].iter().copied())).collect())
}

/// Steps 4–6 given a segmentation and per-frame highlightness; `aesthetic`
/// is evaluated only on the `n` segment peaks.
pub fn select_keyframes(
    seg: &Segmentation,
    highlight: &[f64],
    n: usize,
    k: usize,
    mut aesthetic: impl FnMut(usize) -> Result<f64>,
) -> Result<KeyframeSet> {
    if k == 0 || n % k != 0 {
        return Err(Error::Constraint(format!("k={k} must divide n={n}")));
    }
    let segments = seg.segments();
    let ids = top_segment_ids(&segments, highlight, n)?;
    let chosen: Vec<(usize, usize)> = ids.iter().map(|&i| segments[i]).collect();
    let peaks = pick_segment_peaks(&chosen, highlight);
    let scores = peaks.iter().map(|&t| aesthetic(t)).collect::<Result<Vec<f64>>>()?;
    let keep = aesthetic_filter(&peaks, &scores, k)?;
    let frame_indices = keep.iter().map(|&p| peaks[p]).collect();
    let provenance = keep
        .iter()
        .map(|&p| Provenance { segment_id: ids[p], highlight_score: highlight[peaks[p]], aesthetic_score: scores[p] })
        .collect();
    Ok(KeyframeSet { frame_indices, provenance })
}

/// The full keyframe stage: highlightness, segmentation with at least `n`
/// segments, top-segment peaks, then aesthetic filtering down to `k`.
pub fn extract_keyframes(
    frames: &[Frame],
    features: &FeatureMatrix,
    policy: &DsnPolicy,
    aesthetic: &dyn AestheticBackend,
    n: usize,
    k: usize,
    kts: &KtsConfig,
) -> Result<KeyframeSet> {
    if frames.len() != features.t() {
        return Err(Error::Shape(format!("{} frames but {} feature rows", frames.len(), features.t())));
    }
    if n > features.t() {
        return Err(Error::Constraint(format!("n={n} exceeds the {} sampled frames", features.t())));
    }
    if k == 0 || n % k != 0 {
        return Err(Error::Constraint(format!("k={k} must divide n={n}")));
    }
    let probs = score_highlightness(features, policy)?;
    let highlight: Vec<f64> = probs.probs.iter().map(|&p| p as f64).collect();
    let seg = segment(features, n, kts)?;
    select_keyframes(&seg, &highlight, n, k, |t| {
        let row: ArrayView1<f32> = features.row(t);
        Ok(aesthetic.score(&frames[t], row)?.value)
    })
}
