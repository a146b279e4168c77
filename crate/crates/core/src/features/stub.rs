//! Analytic 8-d descriptor used when no CNN weights are available.

use crate::frame::Frame;

pub const STUB_DIM: usize = 8;

/// `[1, mean R, mean G, mean B, luma centroid x, luma centroid y, luma std,
/// mean |horizontal luma gradient|]` before normalisation.
///
/// Centroids are offsets from the image centre in units of the image size,
/// and 0 for a black frame. The constant first coordinate keeps the vector
/// away from zero so it can always be normalised.
pub fn describe(frame: &Frame) -> [f64; STUB_DIM] {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let n = (w * h) as f64;
    let mut rgb = [0.0f64; 3];
    for p in frame.data().chunks_exact(3) {
        for c in 0..3 {
            rgb[c] += p[c] as f64;
        }
    }
    let luma = frame.luma();
    let (mut total, mut sx, mut sy, mut sq) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let l = luma[y * w + x] as f64;
            total += l;
            sq += l * l;
            sx += l * (x as f64 + 0.5) / w as f64;
            sy += l * (y as f64 + 0.5) / h as f64;
        }
    }
    let (cx, cy) = if total > 0.0 { (sx / total - 0.5, sy / total - 0.5) } else { (0.0, 0.0) };
    let mean = total / n;
    let std = (sq / n - mean * mean).max(0.0).sqrt();
    let mut grad = 0.0f64;
    if w > 1 {
        for y in 0..h {
            for x in 1..w {
                grad += (luma[y * w + x] - luma[y * w + x - 1]).abs() as f64;
            }
        }
        grad /= (h * (w - 1)) as f64;
    }
    [1.0, rgb[0] / n, rgb[1] / n, rgb[2] / n, cx, cy, std, grad]
}
