//! Float RGB frames.

use image::{imageops, RgbImage};
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An RGB image stored row-major as interleaved `f32` triples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != (width * height * 3) as usize {
            return Err(Error::Shape(format!(
                "frame {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Frame { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Frame { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Frame { width: img.width(), height: img.height(), data }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width, self.height, raw).expect("consistent frame buffer")
    }

    /// Bilinear resize to an exact size.
    pub fn resize(&self, width: u32, height: u32) -> Frame {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let out = imageops::resize(&self.to_rgb32f(), width, height, imageops::FilterType::Triangle);
        Frame { width, height, data: out.into_raw() }
    }

    /// Resize so the shorter side equals `side`, then crop the central square.
    pub fn resize_center_crop(&self, side: u32) -> Frame {
        let scale = side as f64 / self.width.min(self.height) as f64;
        let w = ((self.width as f64 * scale).round() as u32).max(side);
        let h = ((self.height as f64 * scale).round() as u32).max(side);
        let r = self.resize(w, h);
        r.crop((w - side) / 2, (h - side) / 2, side, side)
    }

    pub fn crop(&self, x0: u32, y0: u32, width: u32, height: u32) -> Frame {
        Frame::from_fn(width, height, |x, y| self.pixel(x0 + x, y0 + y))
    }

    /// Extends the frame on the right and bottom by mirroring interior pixels.
    pub fn pad_reflect(&self, right: u32, bottom: u32) -> Frame {
        let reflect = |i: u32, n: u32| -> u32 {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i % period;
            if m < n { m } else { period - m }
        };
        Frame::from_fn(self.width + right, self.height + bottom, |x, y| {
            self.pixel(reflect(x, self.width), reflect(y, self.height))
        })
    }

    fn to_rgb32f(&self) -> image::Rgb32FImage {
        image::Rgb32FImage::from_raw(self.width, self.height, self.data.clone()).expect("consistent buffer")
    }

    /// Rec. 601 luma per pixel.
    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> f32 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let s: f32 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        s / self.data.len() as f32
    }
}

/// Stacks frames into an NCHW batch, mapping `[0,1]` to `[lo, hi]`.
pub fn to_batch(frames: &[&Frame], lo: f32, hi: f32) -> Array4<f32> {
    let (w, h) = (frames[0].width as usize, frames[0].height as usize);
    let mut out = Array4::zeros((frames.len(), 3, h, w));
    for (n, f) in frames.iter().enumerate() {
        assert_eq!((f.width as usize, f.height as usize), (w, h), "batch frames differ in size");
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) * 3;
                for c in 0..3 {
                    out[[n, c, y, x]] = lo + (hi - lo) * f.data[i + c];
                }
            }
        }
    }
    out
}

/// Inverse of [`to_batch`] for a single sample, clamping to `[0,1]`.
pub fn from_batch(batch: &ndarray::ArrayView4<f32>, n: usize, lo: f32, hi: f32) -> Frame {
    let (_, _, h, w) = batch.dim();
    Frame::from_fn(w as u32, h as u32, |x, y| {
        let mut px = [0.0; 3];
        for (c, p) in px.iter_mut().enumerate() {
            *p = ((batch[[n, c, y as usize, x as usize]] - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
        px
    })
}
