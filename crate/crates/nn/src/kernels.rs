//! Forward and backward kernels on raw `[H, W, C]` buffers.
//!
//! Convolutions are lowered to matrix products: `conv2d` through an im2col
//! buffer, the stride-2 transposed convolution through a per-pixel product
//! followed by a scatter into the 2x2 output blocks.

use deepwarp_core::image::bilinear_axis;

use crate::real::Real;

/// Rows are output pixels, columns are `(dy, dx, ci)` taps of a `k x k`
/// neighbourhood with zero padding.
pub fn im2col<T: Real>(x: &[T], h: usize, w: usize, ci: usize, k: usize) -> Vec<T> {
    let p = k / 2;
    let row = k * k * ci;
    let mut col = vec![T::zero(); h * w * row];
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * row;
            for dy in 0..k {
                let ii = i + dy;
                if ii < p || ii - p >= h {
                    continue;
                }
                let ii = ii - p;
                for dx in 0..k {
                    let jj = j + dx;
                    if jj < p || jj - p >= w {
                        continue;
                    }
                    let jj = jj - p;
                    let dst = base + (dy * k + dx) * ci;
                    let src = (ii * w + jj) * ci;
                    col[dst..dst + ci].copy_from_slice(&x[src..src + ci]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: sums every column entry back onto its source pixel.
pub fn col2im<T: Real>(col: &[T], h: usize, w: usize, ci: usize, k: usize) -> Vec<T> {
    let p = k / 2;
    let row = k * k * ci;
    let mut x = vec![T::zero(); h * w * ci];
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * row;
            for dy in 0..k {
                let ii = i + dy;
                if ii < p || ii - p >= h {
                    continue;
                }
                let ii = ii - p;
                for dx in 0..k {
                    let jj = j + dx;
                    if jj < p || jj - p >= w {
                        continue;
                    }
                    let jj = jj - p;
                    let src = base + (dy * k + dx) * ci;
                    let dst = (ii * w + jj) * ci;
                    for (a, &b) in x[dst..dst + ci].iter_mut().zip(&col[src..src + ci]) {
                        *a += b;
                    }
                }
            }
        }
    }
    x
}

/// 'same' zero-padded, stride-1 cross-correlation. Kernel layout `[k, k, ci, co]`.
pub fn conv2d<T: Real>(
    x: &[T],
    (h, w, ci): (usize, usize, usize),
    kernel: &[T],
    k: usize,
    co: usize,
    bias: &[T],
) -> Vec<T> {
    let n = h * w;
    let mut out = vec![T::zero(); n * co];
    for px in out.chunks_exact_mut(co) {
        px.copy_from_slice(bias);
    }
    if k == 1 {
        T::gemm(n, ci, co, x, false, kernel, false, T::one(), &mut out);
    } else {
        let col = im2col(x, h, w, ci, k);
        T::gemm(n, k * k * ci, co, &col, false, kernel, false, T::one(), &mut out);
    }
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &[T],
    (h, w, ci): (usize, usize, usize),
    kernel: &[T],
    k: usize,
    co: usize,
    dout: &[T],
    want_input: bool,
) -> ConvGrads<T> {
    let n = h * w;
    let rows = k * k * ci;
    let mut dk = vec![T::zero(); rows * co];
    let col;
    let cols: &[T] = if k == 1 {
        x
    } else {
        col = im2col(x, h, w, ci, k);
        &col
    };
    T::gemm(rows, n, co, cols, true, dout, false, T::zero(), &mut dk);
    let input = want_input.then(|| {
        let mut dcol = vec![T::zero(); n * rows];
        T::gemm(n, co, rows, dout, false, kernel, true, T::zero(), &mut dcol);
        if k == 1 {
            dcol
        } else {
            col2im(&dcol, h, w, ci, k)
        }
    });
    ConvGrads {
        input,
        kernel: dk,
        bias: channel_sums(dout, co),
    }
}

fn channel_sums<T: Real>(g: &[T], c: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; c];
    for px in g.chunks_exact(c) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += v.as_f64();
        }
    }
    acc.into_iter().map(T::of_f64).collect()
}

/// Gathers `[2H, 2W, co]` into the per-pixel block matrix `[H*W, 4*co]`.
fn gather_blocks<T: Real>(y: &[T], h: usize, w: usize, co: usize) -> Vec<T> {
    let mut blocks = vec![T::zero(); h * w * 4 * co];
    for i in 0..h {
        for j in 0..w {
            let dst = (i * w + j) * 4 * co;
            for a in 0..2 {
                for b in 0..2 {
                    let src = ((2 * i + a) * 2 * w + 2 * j + b) * co;
                    let d = dst + (a * 2 + b) * co;
                    blocks[d..d + co].copy_from_slice(&y[src..src + co]);
                }
            }
        }
    }
    blocks
}

/// 2x2, stride-2 transposed convolution. Kernel layout `[ci, 2, 2, co]`:
/// `out[2i + a, 2j + b, o] = bias[o] + sum_c x[i, j, c] K[c, a, b, o]`.
pub fn conv_transpose2<T: Real>(
    x: &[T],
    (h, w, ci): (usize, usize, usize),
    kernel: &[T],
    co: usize,
    bias: &[T],
) -> Vec<T> {
    let mut blocks = vec![T::zero(); h * w * 4 * co];
    T::gemm(h * w, ci, 4 * co, x, false, kernel, false, T::zero(), &mut blocks);
    let mut out = vec![T::zero(); 4 * h * w * co];
    for i in 0..h {
        for j in 0..w {
            let src = (i * w + j) * 4 * co;
            for a in 0..2 {
                for b in 0..2 {
                    let dst = ((2 * i + a) * 2 * w + 2 * j + b) * co;
                    let s = src + (a * 2 + b) * co;
                    for o in 0..co {
                        out[dst + o] = blocks[s + o] + bias[o];
                    }
                }
            }
        }
    }
    out
}

/// Stride-2 convolution with a 2x2 kernel `[ci, 2, 2, co]`, mapping
/// `[2H, 2W, co]` to `[H, W, ci]`. This is the adjoint of the bias-free
/// [`conv_transpose2`].
pub fn conv2d_stride2<T: Real>(y: &[T], (h, w, ci): (usize, usize, usize), kernel: &[T], co: usize) -> Vec<T> {
    let blocks = gather_blocks(y, h, w, co);
    let mut x = vec![T::zero(); h * w * ci];
    T::gemm(h * w, 4 * co, ci, &blocks, false, kernel, true, T::zero(), &mut x);
    x
}

pub fn conv_transpose2_backward<T: Real>(
    x: &[T],
    (h, w, ci): (usize, usize, usize),
    kernel: &[T],
    co: usize,
    dout: &[T],
    want_input: bool,
) -> ConvGrads<T> {
    let blocks = gather_blocks(dout, h, w, co);
    let mut dk = vec![T::zero(); ci * 4 * co];
    T::gemm(ci, h * w, 4 * co, x, true, &blocks, false, T::zero(), &mut dk);
    let input = want_input.then(|| {
        let mut dx = vec![T::zero(); h * w * ci];
        T::gemm(h * w, 4 * co, ci, &blocks, false, kernel, true, T::zero(), &mut dx);
        dx
    });
    ConvGrads {
        input,
        kernel: dk,
        bias: channel_sums(dout, co),
    }
}

/// 2x2 max pooling. Returns the pooled map and, per output element, the flat
/// input index that won (first in row-major window order on ties).
pub fn maxpool2<T: Real>(x: &[T], (h, w, c): (usize, usize, usize)) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut arg = Vec::with_capacity(oh * ow * c);
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let mut best_k = ((2 * i) * w + 2 * j) * c + ch;
                let mut best = x[best_k];
                for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                    let k = ((2 * i + a) * w + 2 * j + b) * c + ch;
                    if x[k] > best {
                        best = x[k];
                        best_k = k;
                    }
                }
                out.push(best);
                arg.push(best_k as u32);
            }
        }
    }
    (out, arg)
}

/// Backward bilinear warp `out[i, j] = src(i - flow_i, j - flow_j)` with
/// coordinates clamped to the image, single-channel source, two-channel flow.
pub fn dense_warp<T: Real>(src: &[T], flow: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let y = T::from_usize(i).unwrap() - flow[2 * p];
            let x = T::from_usize(j).unwrap() - flow[2 * p + 1];
            let (y0, y1, fy) = bilinear_axis(y, h);
            let (x0, x1, fx) = bilinear_axis(x, w);
            let a = src[y0 * w + x0];
            let b = src[y0 * w + x1];
            let c = src[y1 * w + x0];
            let d = src[y1 * w + x1];
            let one = T::one();
            let v = (a * (one - fx) + b * fx) * (one - fy) + (c * (one - fx) + d * fx) * fy;
            let lo = a.min(b).min(c.min(d));
            let hi = a.max(b).max(c.max(d));
            out.push(v.max(lo).min(hi));
        }
    }
    out
}

/// Gradients of [`dense_warp`] with respect to the source and the flow.
/// Coordinates outside the image are clamped and carry no flow gradient.
pub fn dense_warp_backward<T: Real>(
    src: &[T],
    flow: &[T],
    h: usize,
    w: usize,
    dout: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut dsrc = vec![T::zero(); h * w];
    let mut dflow = vec![T::zero(); 2 * h * w];
    let (hmax, wmax) = (T::from_usize(h - 1).unwrap(), T::from_usize(w - 1).unwrap());
    let one = T::one();
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let g = dout[p];
            let y = T::from_usize(i).unwrap() - flow[2 * p];
            let x = T::from_usize(j).unwrap() - flow[2 * p + 1];
            let (y0, y1, fy) = bilinear_axis(y, h);
            let (x0, x1, fx) = bilinear_axis(x, w);
            let (ka, kb, kc, kd) = (y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1);
            dsrc[ka] += g * (one - fy) * (one - fx);
            dsrc[kb] += g * (one - fy) * fx;
            dsrc[kc] += g * fy * (one - fx);
            dsrc[kd] += g * fy * fx;
            let (a, b, c, d) = (src[ka], src[kb], src[kc], src[kd]);
            if h > 1 && y > T::zero() && y < hmax {
                let dv_dy = (c - a) * (one - fx) + (d - b) * fx;
                dflow[2 * p] -= g * dv_dy;
            }
            if w > 1 && x > T::zero() && x < wmax {
                let dv_dx = (b - a) * (one - fy) + (d - c) * fy;
                dflow[2 * p + 1] -= g * dv_dx;
            }
        }
    }
    (dsrc, dflow)
}

/// Valid-mode separable filtering of each channel with `taps` on both axes,
/// accumulated in `f64`.
pub fn filter_valid<T: Real>(x: &[T], (h, w, c): (usize, usize, usize), taps: &[f64]) -> Vec<T> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0f64; h * ow * c];
    for i in 0..h {
        for j in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &tap) in taps.iter().enumerate() {
                    acc += tap * x[(i * w + j + t) * c + ch].as_f64();
                }
                rows[(i * ow + j) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![T::zero(); oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &tap) in taps.iter().enumerate() {
                    acc += tap * rows[((i + t) * ow + j) * c + ch];
                }
                out[(i * ow + j) * c + ch] = T::of_f64(acc);
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads output gradients back over each window.
pub fn filter_valid_backward<T: Real>(dout: &[T], (h, w, c): (usize, usize, usize), taps: &[f64]) -> Vec<T> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0f64; h * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let g = dout[(i * ow + j) * c + ch].as_f64();
                for (t, &tap) in taps.iter().enumerate() {
                    rows[((i + t) * ow + j) * c + ch] += tap * g;
                }
            }
        }
    }
    let mut dx = vec![0.0f64; h * w * c];
    for i in 0..h {
        for j in 0..ow {
            for ch in 0..c {
                let g = rows[(i * ow + j) * c + ch];
                for (t, &tap) in taps.iter().enumerate() {
                    dx[(i * w + j + t) * c + ch] += tap * g;
                }
            }
        }
    }
    dx.into_iter().map(T::of_f64).collect()
}
