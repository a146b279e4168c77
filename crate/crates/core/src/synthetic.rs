//! Deterministic toy corpora for smoke training and demos.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::FeatureMatrix;
use crate::frame::Frame;

/// Videos of `t` unit-norm frames: the first `split` near prototype A, the
/// rest near prototype B. Both prototypes are shared by every video.
///
/// An unequal split matters: with equal halves the expected reward of a
/// uniform policy barely depends on which frames it favours.
pub fn two_cluster_corpus(videos: usize, t: usize, split: usize, d: usize, seed: u64) -> Vec<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..videos)
        .map(|_| {
            let mut x = Array2::from_shape_fn((t, d), |(i, j)| {
                let c = if i < split { a[j] } else { b[j] };
                c + rng.random_range(-0.05..0.05)
            });
            for mut r in x.rows_mut() {
                let n = r.iter().map(|v| v * v).sum::<f32>().sqrt();
                r.mapv_inplace(|v| v / n);
            }
            FeatureMatrix::new(x, "synthetic")
        })
        .collect()
}

/// Smooth colour fields with mild pixel noise, standing in for photos.
pub fn toy_photos(n: usize, side: u32, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let waves: Vec<[f32; 4]> = (0..3)
                .map(|_| {
                    [
                        rng.random_range(1.0..4.0),
                        rng.random_range(1.0..4.0),
                        rng.random_range(0.0..std::f32::consts::TAU),
                        rng.random_range(0.2..0.8),
                    ]
                })
                .collect();
            let noise: Vec<f32> = (0..side * side * 3).map(|_| rng.random_range(-0.05..0.05)).collect();
            let s = side as f32;
            Frame::from_fn(side, side, |x, y| {
                let (u, v) = (x as f32 / s, y as f32 / s);
                let i = ((y * side + x) * 3) as usize;
                std::array::from_fn(|c| {
                    let [fx, fy, ph, amp] = waves[c];
                    let base = 0.5 + 0.4 * amp * (std::f32::consts::TAU * (fx * u + fy * v) + ph).sin();
                    (base + noise[i + c]).clamp(0.0, 1.0)
                })
            })
        })
        .collect()
}

/// Flat-colour cells with dark outlines, standing in for comic panels.
pub fn toy_comics(n: usize, side: u32, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = 12;
    (0..n)
        .map(|_| {
            let cells = side.div_ceil(cell) as usize;
            let colours: Vec<[f32; 3]> = (0..cells * cells)
                .map(|_| std::array::from_fn(|_| [0.15, 0.55, 0.95][rng.random_range(0..3)]))
                .collect();
            let (ox, oy) = (rng.random_range(0..cell), rng.random_range(0..cell));
            Frame::from_fn(side, side, |x, y| {
                let (cx, cy) = ((x + ox) % cell, (y + oy) % cell);
                if cx < 2 || cy < 2 {
                    return [0.05; 3];
                }
                let i = (((y + oy) / cell) as usize % cells) * cells + ((x + ox) / cell) as usize % cells;
                colours[i]
            })
        })
        .collect()
}
