//! Highlightness scoring with a recurrent summarisation policy.

mod dsn;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use self::dsn::{
    dsn_logits, log_prob_surrogate, score_highlightness, train_dsn, write_reward_log, DsnPolicy, DsnTrainConfig,
    EpochReward,
};

use crate::error::{Error, Result};

/// Per-frame selection probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightScores {
    pub probs: Vec<f32>,
}

/// Frames chosen in one policy rollout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub selected: Vec<usize>,
}

impl SelectionMask {
    pub fn from_bools(mask: &[bool]) -> Self {
        SelectionMask { selected: mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

fn check_selection(x: &ArrayView2<f32>, sel: &SelectionMask) -> Result<()> {
    if sel.is_empty() {
        return Err(Error::DegenerateSelection("selection is empty".into()));
    }
    if let Some(&bad) = sel.selected.iter().find(|&&t| t >= x.nrows()) {
        return Err(Error::Shape(format!("selected frame {bad} out of range for T={}", x.nrows())));
    }
    Ok(())
}

/// Mean cosine dissimilarity over ordered pairs of distinct selected frames.
pub fn diversity_reward(x: &ArrayView2<f32>, sel: &SelectionMask) -> Result<f64> {
    check_selection(x, sel)?;
    let s = &sel.selected;
    if s.len() == 1 {
        return Ok(0.0);
    }
    let norms: Vec<f64> = s
        .iter()
        .map(|&t| x.row(t).iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12))
        .collect();
    let mut total = 0.0;
    for (i, &a) in s.iter().enumerate() {
        for (j, &b) in s.iter().enumerate() {
            if i != j {
                let dot: f64 = x.row(a).iter().zip(x.row(b)).map(|(p, q)| *p as f64 * *q as f64).sum();
                total += 1.0 - dot / (norms[i] * norms[j]);
            }
        }
    }
    Ok(total / (s.len() * (s.len() - 1)) as f64)
}

/// `exp(-mean_t min_{s in selection} |x_t - x_s|)`.
pub fn representativeness_reward(x: &ArrayView2<f32>, sel: &SelectionMask) -> Result<f64> {
    check_selection(x, sel)?;
    let t_len = x.nrows();
    let mut total = 0.0;
    for t in 0..t_len {
        let mut best = f64::INFINITY;
        for &s in &sel.selected {
            let d: f64 = x.row(t).iter().zip(x.row(s)).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum();
            best = best.min(d.sqrt());
        }
        total += best;
    }
    Ok((-total / t_len as f64).exp())
}

/// `R_div + R_rep`, with the empty selection rewarded 0.
pub fn episode_reward(x: &ArrayView2<f32>, sel: &SelectionMask) -> Result<f64> {
    if sel.is_empty() {
        return Ok(0.0);
    }
    Ok(diversity_reward(x, sel)? + representativeness_reward(x, sel)?)
}
