//! Raw forward/backward kernels over row-major slices.
//!
//! Shapes are validated by the callers in [`crate::tape`]; these functions
//! assume consistent dimensions.

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Output columns `ox` whose input column `ox*stride + kx - padding` lies inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        valid_range(self.width, self.out_width(), kx, self.stride, self.padding)
    }

    fn valid_rows(&self, ky: usize) -> (usize, usize) {
        valid_range(self.height, self.out_height(), ky, self.stride, self.padding)
    }
}

fn valid_range(extent: usize, out: usize, offset: usize, stride: usize, padding: usize) -> (usize, usize) {
    // ix = o*stride + offset - padding must satisfy 0 <= ix < extent
    let lo = if padding > offset { (padding - offset).div_ceil(stride) } else { 0 };
    let hi = if extent + padding > offset {
        ((extent + padding - offset - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Dot product with eight independent partial sums so the loop vectorizes.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut lanes = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            lanes[i] += x[i] * y[i];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}

/// Unfolds the input into a `[C_in*k*k, H'*W']` matrix; out-of-image taps stay zero.
fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T]) -> Vec<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, k, s) = (g.height, g.width, g.kernel, g.stride);
    let mut cols = vec![T::zero(); g.in_channels * k * k * ho * wo];
    for ci in 0..g.in_channels {
        let src = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = g.valid_rows(ky);
            for kx in 0..k {
                let (ox_lo, ox_hi) = g.valid_cols(kx);
                let r = (ci * k + ky) * k + kx;
                let dst = &mut cols[r * ho * wo..(r + 1) * ho * wo];
                for oy in oy_lo..oy_hi {
                    let row_in = &src[(oy * s + ky - g.padding) * w..][..w];
                    let row_out = &mut dst[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let ix0 = ox_lo + kx - g.padding;
                        row_out[ox_lo..ox_hi].copy_from_slice(&row_in[ix0..ix0 + ox_hi - ox_lo]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            row_out[ox] = row_in[ox * s + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Inverse scatter of [`im2col`], summing overlapping taps.
fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T]) -> Vec<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, k, s) = (g.height, g.width, g.kernel, g.stride);
    let mut out = vec![T::zero(); g.in_channels * h * w];
    for ci in 0..g.in_channels {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = g.valid_rows(ky);
            for kx in 0..k {
                let (ox_lo, ox_hi) = g.valid_cols(kx);
                let r = (ci * k + ky) * k + kx;
                let src = &cols[r * ho * wo..(r + 1) * ho * wo];
                for oy in oy_lo..oy_hi {
                    let row_out = &mut dst[(oy * s + ky - g.padding) * w..][..w];
                    let row_in = &src[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let ix0 = ox_lo + kx - g.padding;
                        for (d, &v) in row_out[ix0..ix0 + ox_hi - ox_lo].iter_mut().zip(&row_in[ox_lo..ox_hi]) {
                            *d += v;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            row_out[ox * s + kx - g.padding] += row_in[ox];
                        }
                    }
                }
            }
        }
    }
    out
}

fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// `y += sum_r coeffs[r] * x[r]` where `x` holds `coeffs.len()` rows of length `y.len()`.
fn gemv_rows<T: Scalar>(coeffs: &[T], x: &[T], y: &mut [T]) {
    let n = y.len();
    let mut r = 0;
    while r + 4 <= coeffs.len() {
        let (a0, a1, a2, a3) = (coeffs[r], coeffs[r + 1], coeffs[r + 2], coeffs[r + 3]);
        let (x0, x1, x2, x3) = (&x[r * n..][..n], &x[(r + 1) * n..][..n], &x[(r + 2) * n..][..n], &x[(r + 3) * n..][..n]);
        for i in 0..n {
            y[i] += a0 * x0[i] + a1 * x1[i] + a2 * x2[i] + a3 * x3[i];
        }
        r += 4;
    }
    for (r, &a) in coeffs.iter().enumerate().skip(r) {
        axpy(a, &x[r * n..][..n], y);
    }
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let n = g.out_height() * g.out_width();
    let rows = g.in_channels * g.kernel * g.kernel;
    let cols = im2col(g, input);
    let mut out = vec![T::zero(); g.out_channels * n];
    for (co, plane) in out.chunks_exact_mut(n).enumerate() {
        plane.fill(bias[co]);
        gemv_rows(&weight[co * rows..(co + 1) * rows], &cols, plane);
    }
    out
}

/// Gradients of a convolution. `grad_input` is skipped when `None` is requested.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    want_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let n = g.out_height() * g.out_width();
    let rows = g.in_channels * g.kernel * g.kernel;
    let cols = im2col(g, input);
    let grad_bias: Vec<T> = grad_out.chunks_exact(n).map(|p| p.iter().copied().sum()).collect();
    let mut grad_weight = vec![T::zero(); weight.len()];
    for (co, gplane) in grad_out.chunks_exact(n).enumerate() {
        for (r, gw) in grad_weight[co * rows..(co + 1) * rows].iter_mut().enumerate() {
            *gw = dot(gplane, &cols[r * n..(r + 1) * n]);
        }
    }
    let grad_input = want_input.then(|| {
        let mut gcols = cols;
        gcols.fill(T::zero());
        let mut column = vec![T::zero(); g.out_channels];
        for (r, dst) in gcols.chunks_exact_mut(n).enumerate() {
            column.iter_mut().enumerate().for_each(|(co, c)| *c = weight[co * rows + r]);
            gemv_rows(&column, grad_out, dst);
        }
        col2im(g, &gcols)
    });
    (grad_input, grad_weight, grad_bias)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }
}

/// Window maxima plus the flat input index each maximum came from.
/// Ties resolve to the first cell in row-major scan order.
pub fn max_pool2d_forward<T: Scalar>(g: &PoolGeometry, input: &[T]) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let mut out = Vec::with_capacity(g.channels * ho * wo);
    let mut arg = Vec::with_capacity(g.channels * ho * wo);
    for c in 0..g.channels {
        let base = c * g.height * g.width;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = base + oy * g.stride * g.width + ox * g.stride;
                let mut best = input[best_idx];
                for ky in 0..g.kernel {
                    let row = base + (oy * g.stride + ky) * g.width + ox * g.stride;
                    for kx in 0..g.kernel {
                        let v = input[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

pub fn max_pool2d_backward<T: Scalar>(input_len: usize, argmax: &[usize], grad_out: &[T]) -> Vec<T> {
    let mut gi = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        gi[idx] += g;
    }
    gi
}

pub fn avg_pool2d_forward<T: Scalar>(g: &PoolGeometry, input: &[T]) -> Vec<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let norm = T::from_usize(g.kernel * g.kernel).unwrap();
    let mut out = Vec::with_capacity(g.channels * ho * wo);
    for c in 0..g.channels {
        let base = c * g.height * g.width;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for ky in 0..g.kernel {
                    let row = base + (oy * g.stride + ky) * g.width + ox * g.stride;
                    acc += input[row..row + g.kernel].iter().copied().sum::<T>();
                }
                out.push(acc / norm);
            }
        }
    }
    out
}

pub fn avg_pool2d_backward<T: Scalar>(g: &PoolGeometry, grad_out: &[T]) -> Vec<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let norm = T::from_usize(g.kernel * g.kernel).unwrap();
    let mut gi = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let base = c * g.height * g.width;
        for oy in 0..ho {
            for ox in 0..wo {
                let share = grad_out[(c * ho + oy) * wo + ox] / norm;
                for ky in 0..g.kernel {
                    let row = base + (oy * g.stride + ky) * g.width + ox * g.stride;
                    gi[row..row + g.kernel].iter_mut().for_each(|v| *v += share);
                }
            }
        }
    }
    gi
}

/// `weight` is `[out, in]` row-major.
pub fn linear_forward<T: Scalar>(input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let n = input.len();
    weight
        .chunks_exact(n)
        .zip(bias)
        .map(|(row, &b)| dot(row, input) + b)
        .collect()
}

pub fn linear_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    want_input: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let n = input.len();
    let mut gw = vec![T::zero(); weight.len()];
    for (row, &g) in gw.chunks_exact_mut(n).zip(grad_out) {
        row.iter_mut().zip(input).for_each(|(w, &x)| *w = g * x);
    }
    let gi = want_input.then(|| {
        let mut gi = vec![T::zero(); n];
        for (row, &g) in weight.chunks_exact(n).zip(grad_out) {
            gi.iter_mut().zip(row).for_each(|(acc, &w)| *acc += w * g);
        }
        gi
    });
    (gi, gw)
}
