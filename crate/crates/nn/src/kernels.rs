//! Forward and backward kernels for the spatial ops.
//!
//! All image tensors use NCHW layout. Kernels operate on standard-layout
//! slices and hand the heavy lifting to `ndarray`'s matrix product.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};

use crate::Float;

/// Output extent of a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= kernel, "kernel larger than padded input");
    (input + 2 * pad - kernel) / stride + 1
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<F: Float>(x: &[F], g: &ConvGeom) -> Array2<F> {
    let mut cols = vec![F::zero(); g.rows() * g.cols()];
    let ncol = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((g.rows(), ncol), cols).expect("im2col shape")
}

fn col2im<F: Float>(cols: &ArrayView2<F>, g: &ConvGeom, dx: &mut [F]) {
    let cols = cols.as_standard_layout();
    let cols = cols.as_slice().expect("standard layout");
    let ncol = g.cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let inp = &src[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, &v) in inp.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn geom<F: Float>(x: &ArrayView4<F>, w: &ArrayView4<F>, stride: usize, pad: usize) -> ConvGeom {
    let (_, c, h, wd) = x.dim();
    let (_, wc, kh, kw) = w.dim();
    assert_eq!(c, wc, "conv2d: input has {c} channels, weight expects {wc}");
    ConvGeom {
        c,
        h,
        w: wd,
        kh,
        kw,
        stride,
        pad,
        ho: conv_out_len(h, kh, stride, pad),
        wo: conv_out_len(wd, kw, stride, pad),
    }
}

/// Zero-padded 2-D cross-correlation. `x`: [N,C,H,W], `w`: [O,C,KH,KW].
pub fn conv2d_forward<F: Float>(
    x: &ArrayView4<F>,
    w: &ArrayView4<F>,
    bias: Option<&ArrayView1<F>>,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let g = geom(x, w, stride, pad);
    let n = x.dim().0;
    let o = w.dim().0;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let w2 = w
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((o, g.rows()))
        .expect("weight reshape");
    let per = g.c * g.h * g.w;
    let mut out = Array4::<F>::zeros((n, o, g.ho, g.wo));
    for i in 0..n {
        let cols = im2col(&xs[i * per..(i + 1) * per], &g);
        let y = w2.dot(&cols);
        let mut dst = out.index_axis_mut(Axis(0), i);
        let mut dst = dst
            .view_mut()
            .into_shape_with_order((o, g.cols()))
            .expect("contiguous output");
        dst.assign(&y);
        if let Some(b) = bias {
            for (mut row, &bv) in dst.outer_iter_mut().zip(b.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] given the upstream gradient `gout`.
/// Returns `(dx, dw, db)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward<F: Float>(
    x: &ArrayView4<F>,
    w: &ArrayView4<F>,
    gout: &ArrayView4<F>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Array4<F>>, Array4<F>, Array1<F>) {
    let g = geom(x, w, stride, pad);
    let n = x.dim().0;
    let o = w.dim().0;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let w2 = w
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((o, g.rows()))
        .expect("weight reshape");
    let gout = gout.as_standard_layout();
    let per = g.c * g.h * g.w;
    let mut dw = Array2::<F>::zeros((o, g.rows()));
    let mut db = Array1::<F>::zeros(o);
    let mut dx = if need_dx {
        Some(vec![F::zero(); n * per])
    } else {
        None
    };
    for i in 0..n {
        let go = gout
            .index_axis(Axis(0), i)
            .into_shape_with_order((o, g.cols()))
            .expect("contiguous grad");
        let cols = im2col(&xs[i * per..(i + 1) * per], &g);
        dw += &go.dot(&cols.t());
        db += &go.sum_axis(Axis(1));
        if let Some(dx) = dx.as_mut() {
            let dcols = w2.t().dot(&go);
            col2im(&dcols.view(), &g, &mut dx[i * per..(i + 1) * per]);
        }
    }
    let dx = dx.map(|v| Array4::from_shape_vec((n, g.c, g.h, g.w), v).expect("dx shape"));
    let dw = dw
        .into_shape_with_order(w.dim())
        .expect("dw reshape");
    (dx, dw, db)
}

/// Output extent of a max-pool along one axis, following the usual
/// `ceil_mode` rule that the last window must start inside the input.
pub fn pool_out_len(input: usize, kernel: usize, stride: usize, pad: usize, ceil_mode: bool) -> usize {
    let span = input + 2 * pad - kernel;
    let mut out = if ceil_mode {
        span.div_ceil(stride) + 1
    } else {
        span / stride + 1
    };
    if ceil_mode && (out - 1) * stride >= input + pad {
        out -= 1;
    }
    out
}

/// Max pooling; returns the pooled tensor and, per output element, the
/// flat index of the winning input element.
pub fn maxpool2d_forward<F: Float>(
    x: &ArrayView4<F>,
    kernel: usize,
    stride: usize,
    pad: usize,
    ceil_mode: bool,
) -> (Array4<F>, Vec<usize>) {
    let (n, c, h, w) = x.dim();
    let ho = pool_out_len(h, kernel, stride, pad, ceil_mode);
    let wo = pool_out_len(w, kernel, stride, pad, ceil_mode);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            let y0 = (oy * stride) as isize - pad as isize;
            for ox in 0..wo {
                let x0 = (ox * stride) as isize - pad as isize;
                let mut best = F::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..kernel as isize {
                    let iy = y0 + ky;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel as isize {
                        let ix = x0 + kx;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || xs[idx] > best {
                            best = xs[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    let out = Array4::from_shape_vec((n, c, ho, wo), out).expect("pool shape");
    (out, arg)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x_forward<F: Float>(x: &ArrayView4<F>) -> Array4<F> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(i, j, y, xx)| x[[i, j, y / 2, xx / 2]])
}

pub fn upsample2x_backward<F: Float>(g: &ArrayView4<F>) -> Array4<F> {
    let (n, c, h2, w2) = g.dim();
    let mut out = Array4::<F>::zeros((n, c, h2 / 2, w2 / 2));
    for ((i, j, y, x), &v) in g.indexed_iter() {
        out[[i, j, y / 2, x / 2]] += v;
    }
    out
}

/// Per-(sample, channel) normalisation statistics over the spatial axes.
/// Returns normalised activations and the inverse standard deviations.
pub fn instance_norm_stats<F: Float>(x: &ArrayView4<F>, eps: F) -> (Array4<F>, Vec<F>) {
    let (n, c, h, w) = x.dim();
    let m = F::c((h * w) as f64);
    let mut xhat = x.to_owned();
    let mut inv = Vec::with_capacity(n * c);
    for mut sample in xhat.outer_iter_mut() {
        for mut plane in sample.outer_iter_mut() {
            let mean = plane.sum() / m;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / m;
            let is = F::one() / (var + eps).sqrt();
            plane.mapv_inplace(|v| (v - mean) * is);
            inv.push(is);
        }
    }
    (xhat, inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    #[test]
    fn conv_identity_kernel_copies_input() {
        let x = Array::from_shape_fn((1, 1, 3, 3), |(_, _, i, j)| (i * 3 + j) as f64);
        let w = Array::from_shape_fn((1, 1, 3, 3), |(_, _, i, j)| if i == 1 && j == 1 { 1.0 } else { 0.0 });
        let y = conv2d_forward(&x.view(), &w.view(), None, 1, 1);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_stride_two_output_shape() {
        let x = Array4::<f32>::zeros((2, 3, 8, 6));
        let w = Array4::<f32>::zeros((5, 3, 3, 3));
        let y = conv2d_forward(&x.view(), &w.view(), None, 2, 1);
        assert_eq!(y.dim(), (2, 5, 4, 3));
    }

    #[test]
    fn conv_bias_added_per_channel() {
        let x = Array4::<f64>::zeros((1, 1, 2, 2));
        let w = Array4::<f64>::zeros((2, 1, 1, 1));
        let b = array![1.5, -2.0];
        let y = conv2d_forward(&x.view(), &w.view(), Some(&b.view()), 1, 0);
        assert!(y.index_axis(Axis(1), 0).iter().all(|&v| v == 1.5));
        assert!(y.index_axis(Axis(1), 1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn maxpool_ceil_mode_matches_reference_sizes() {
        // 112 -> 56 and 7x7 with k3 s2 ceil: 3, as in the usual inception stem.
        assert_eq!(pool_out_len(112, 3, 2, 0, true), 56);
        assert_eq!(pool_out_len(7, 3, 2, 0, true), 3);
        assert_eq!(pool_out_len(6, 2, 2, 0, false), 3);
        assert_eq!(pool_out_len(5, 3, 1, 1, false), 5);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = Array::from_shape_vec((1, 1, 2, 2), vec![1.0f32, 4.0, 3.0, 2.0]).unwrap();
        let (y, arg) = maxpool2d_forward(&x.view(), 2, 2, 0, false);
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let x = Array::from_shape_fn((1, 2, 3, 3), |(_, c, i, j)| (c * 10 + i * 3 + j) as f64);
        let (xhat, _) = instance_norm_stats(&x.view(), 0.0);
        for plane in xhat.index_axis(Axis(0), 0).outer_iter() {
            let mean = plane.sum() / 9.0;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }
}
