//! Translation recovery by phase correlation.
//!
//! The shift is the argmax of the inverse transform of the normalized
//! cross-power spectrum `S ∘ T* / |S ∘ T*|`.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Added to `|S ∘ T*|` before dividing, so dead frequency bins stay finite.
pub const SPECTRUM_EPS: f64 = 1e-12;

/// Row-major complex grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn from_image<T: Scalar>(img: &Image<T>) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            data: img
                .data()
                .iter()
                .map(|v| Complex64::new(v.as_f64(), 0.0))
                .collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.width + j]
    }
}

fn transform(grid: &ComplexGrid, inverse: bool) -> Result<ComplexGrid> {
    let (h, w) = (grid.height, grid.width);
    if h == 0 || w == 0 || grid.data.len() != h * w {
        return Err(Error::Dimension(format!(
            "fft2 needs a non-empty grid, got {h}x{w} with {} values",
            grid.data.len()
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut data = grid.data.clone();
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = data[i * w + j];
        }
        col_fft.process(&mut column);
        for i in 0..h {
            data[i * w + j] = column[i];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        for v in &mut data {
            *v *= scale;
        }
    }
    Ok(ComplexGrid {
        height: h,
        width: w,
        data,
    })
}

/// Forward 2D DFT, any size.
pub fn fft2(grid: &ComplexGrid) -> Result<ComplexGrid> {
    transform(grid, false)
}

/// Inverse 2D DFT including the `1 / (H W)` normalization.
pub fn ifft2(grid: &ComplexGrid) -> Result<ComplexGrid> {
    transform(grid, true)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shift {
    /// Row shift of the subject relative to the template.
    pub di: isize,
    /// Column shift.
    pub dj: isize,
    pub peak_response: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseCorrelationOptions {
    /// Taper both images with a separable Hann window before transforming.
    pub hann_window: bool,
}

fn hann(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|k| 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Wraps an FFT index into a signed shift in `(-n/2, n/2]`.
fn wrap(idx: usize, n: usize) -> isize {
    if idx > n / 2 {
        idx as isize - n as isize
    } else {
        idx as isize
    }
}

/// Estimates the integer translation `(di, dj)` such that
/// `s[i, j] ≈ t[i - di, j - dj]` (circularly).
pub fn phase_correlate<T: Scalar>(
    s: &Image<T>,
    t: &Image<T>,
    opts: PhaseCorrelationOptions,
) -> Result<Shift> {
    s.ensure_same_shape(t, "phase correlation")?;
    for (name, img) in [("subject", s), ("template", t)] {
        let (lo, hi) = img.min_max();
        if !(hi > lo) {
            return Err(Error::Degenerate(format!(
                "{name} image is constant; its spectrum has no phase information"
            )));
        }
    }
    let (h, w) = s.shape();
    let mut gs = ComplexGrid::from_image(s);
    let mut gt = ComplexGrid::from_image(t);
    if opts.hann_window {
        let (wy, wx) = (hann(h), hann(w));
        for i in 0..h {
            for j in 0..w {
                let k = wy[i] * wx[j];
                gs.data[i * w + j] *= k;
                gt.data[i * w + j] *= k;
            }
        }
    }
    let fs = fft2(&gs)?;
    let ft = fft2(&gt)?;
    let cross = ComplexGrid {
        height: h,
        width: w,
        data: fs
            .data
            .iter()
            .zip(&ft.data)
            .map(|(a, b)| {
                let p = a * b.conj();
                p / (p.norm() + SPECTRUM_EPS)
            })
            .collect(),
    };
    let corr = ifft2(&cross)?;
    let (mut best, mut best_k) = (f64::NEG_INFINITY, 0);
    for (k, v) in corr.data.iter().enumerate() {
        if v.re > best {
            best = v.re;
            best_k = k;
        }
    }
    Ok(Shift {
        di: wrap(best_k / w, h),
        dj: wrap(best_k % w, w),
        peak_response: best,
    })
}

/// Circular shift: `out[i, j] = img[(i - di) mod h, (j - dj) mod w]`.
pub fn circular_shift<T: Scalar>(img: &Image<T>, di: isize, dj: isize) -> Image<T> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    Image::from_fn(img.height(), img.width(), |i, j| {
        let si = (i as isize - di).rem_euclid(h) as usize;
        let sj = (j as isize - dj).rem_euclid(w) as usize;
        img.get(si, sj)
    })
}
