//! Edge smoothing used to build negative examples for the discriminator.

use image::{imageops, Rgb32FImage};
use imageproc::distance_transform::Norm;
use imageproc::edges::canny;
use imageproc::filter::separable_filter_equal;
use imageproc::morphology::dilate;

use crate::frame::Frame;

pub const CANNY_LOW: f32 = 100.0;
pub const CANNY_HIGH: f32 = 200.0;
/// Chebyshev radius of the square dilation (radius 2 is a 5×5 kernel).
pub const DILATE_RADIUS: u8 = 2;
pub const BLUR_SIGMA: f64 = 3.0;
pub const BLUR_TAPS: usize = 7;

fn gaussian_taps() -> Vec<f32> {
    let r = (BLUR_TAPS / 2) as f64;
    let raw: Vec<f64> = (0..BLUR_TAPS)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * BLUR_SIGMA * BLUR_SIGMA)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / s) as f32).collect()
}

/// Pixel mask of the dilated Canny edges, row-major, `true` inside.
pub fn edge_mask(frame: &Frame) -> Vec<bool> {
    let gray = imageops::grayscale(&frame.to_rgb8());
    let edges = canny(&gray, CANNY_LOW, CANNY_HIGH);
    let grown = dilate(&edges, Norm::LInf, DILATE_RADIUS);
    grown.as_raw().iter().map(|&v| v > 0).collect()
}

/// Replaces pixels inside the dilated edge mask by their 7×7 Gaussian blur.
/// Pixels outside the mask are copied bit for bit.
pub fn edge_blur(frame: &Frame) -> Frame {
    let mask = edge_mask(frame);
    if !mask.iter().any(|&m| m) {
        return frame.clone();
    }
    let img = Rgb32FImage::from_raw(frame.width(), frame.height(), frame.data().to_vec())
        .expect("consistent frame buffer");
    let blurred = separable_filter_equal(&img, &gaussian_taps());
    let src = frame.data();
    let blur = blurred.as_raw();
    let mut data = src.to_vec();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            data[3 * i..3 * i + 3].copy_from_slice(&blur[3 * i..3 * i + 3]);
        }
    }
    Frame::new(frame.width(), frame.height(), data).expect("same size")
}
