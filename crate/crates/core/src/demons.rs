//! Multi-resolution diffeomorphic demons.
//!
//! Each iteration computes the classic demons force against the fixed image,
//! exponentiates it by scaling and squaring, composes it into the accumulated
//! field and regularizes the result with a Gaussian. Levels run coarse to fine
//! over a 2x2-mean pyramid.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{mse, ssim, SsimParams};
use crate::scalar::Scalar;
use crate::warpfield::WarpField;

/// Denominators below this produce a zero update.
const FORCE_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct DemonsConfig {
    pub levels: usize,
    pub iterations_per_level: usize,
    /// Gaussian regularization of the accumulated field, in pixels.
    pub smoothing_sigma: f64,
    /// Gaussian smoothing of each update, in pixels.
    pub update_sigma: f64,
    /// Per-pixel cap on the update magnitude.
    pub max_step: f64,
    /// Squarings for the exponential; `None` picks the smallest count that
    /// brings the scaled update below half a pixel.
    pub squarings: Option<u32>,
    /// Record MSE/SSIM after every iteration.
    pub record_trace: bool,
}

impl Default for DemonsConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations_per_level: 30,
            smoothing_sigma: 1.0,
            update_sigma: 1.0,
            max_step: 2.0,
            squarings: None,
            record_trace: true,
        }
    }
}

impl DemonsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.iterations_per_level < 1 {
            return Err(Error::Config(
                "demons needs at least one level and one iteration".into(),
            ));
        }
        if !(self.smoothing_sigma >= 0.0 && self.update_sigma >= 0.0) {
            return Err(Error::Config("demons sigmas must be >= 0".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::Config("demons max_step must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// Pyramid level; 0 is full resolution.
    pub level: usize,
    pub mse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct DemonsResult<T> {
    pub field: WarpField<T>,
    pub warped: Image<T>,
    pub trace: Vec<TraceRow>,
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and replicated edges.
pub fn gaussian_smooth<T: Scalar>(grid: &Image<T>, sigma: f64) -> Image<T> {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = {
        let raw: Vec<f64> = (-r..=r)
            .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let (h, w) = grid.shape();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, &c) in taps.iter().enumerate() {
                acc += c * grid.get(i, clamp(j as isize + t as isize - r, w)).as_f64();
            }
            rows[i * w + j] = acc;
        }
    }
    Image::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for (t, &c) in taps.iter().enumerate() {
            acc += c * rows[clamp(i as isize + t as isize - r, h) * w + j];
        }
        T::of_f64(acc)
    })
}

fn smooth_field<T: Scalar>(f: &WarpField<T>, sigma: f64) -> WarpField<T> {
    if sigma <= 0.0 {
        return f.clone();
    }
    let (a, b) = f.component_images();
    WarpField::from_images(&gaussian_smooth(&a, sigma), &gaussian_smooth(&b, sigma)).unwrap()
}

/// Central-difference gradient with replicated edges: `(d/di, d/dj)`.
fn gradient<T: Scalar>(img: &Image<T>) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = img.shape();
    let mut gi = vec![0.0; h * w];
    let mut gj = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let up = img.get(i.saturating_sub(1), j).as_f64();
            let down = img.get((i + 1).min(h - 1), j).as_f64();
            let left = img.get(i, j.saturating_sub(1)).as_f64();
            let right = img.get(i, (j + 1).min(w - 1)).as_f64();
            gi[i * w + j] = 0.5 * (down - up);
            gj[i * w + j] = 0.5 * (right - left);
        }
    }
    (gi, gj)
}

/// One demons update `(M - F) ∇F / (|∇F|^2 + (M - F)^2)`, capped at
/// `max_step` and smoothed with `update_sigma`.
pub fn demons_step<T: Scalar>(
    fixed: &Image<T>,
    moving_warped: &Image<T>,
    cfg: &DemonsConfig,
) -> Result<WarpField<T>> {
    fixed.ensure_same_shape(moving_warped, "demons step")?;
    let (h, w) = fixed.shape();
    let (gi, gj) = gradient(fixed);
    let mut ui = vec![T::zero(); h * w];
    let mut uj = vec![T::zero(); h * w];
    for k in 0..h * w {
        let diff = moving_warped.data()[k].as_f64() - fixed.data()[k].as_f64();
        let denom = gi[k] * gi[k] + gj[k] * gj[k] + diff * diff;
        if denom < FORCE_EPS {
            continue;
        }
        let (mut a, mut b) = (diff * gi[k] / denom, diff * gj[k] / denom);
        let mag = (a * a + b * b).sqrt();
        if mag > cfg.max_step {
            a *= cfg.max_step / mag;
            b *= cfg.max_step / mag;
        }
        ui[k] = T::of_f64(a);
        uj[k] = T::of_f64(b);
    }
    let u = WarpField::from_parts(h, w, ui, uj)?;
    Ok(smooth_field(&u, cfg.update_sigma))
}

/// Squaring count that brings `max |v| / 2^n` below half a pixel.
pub fn auto_squarings<T: Scalar>(v: &WarpField<T>) -> u32 {
    let m = v.max_magnitude().as_f64();
    let mut n = 0;
    while m / f64::powi(2.0, n as i32) >= 0.5 && n < 30 {
        n += 1;
    }
    n
}

/// Exponential of a stationary velocity field by scaling and squaring.
pub fn exp_field<T: Scalar>(v: &WarpField<T>, squarings: u32) -> WarpField<T> {
    let mut f = v.scale(T::of_f64(f64::powi(0.5, squarings as i32)));
    for _ in 0..squarings {
        f = f.compose(&f).expect("same shape");
    }
    f
}

fn pyramid<T: Scalar>(img: &Image<T>, levels: usize) -> Vec<Image<T>> {
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let next = out.last().unwrap().downsample2();
        out.push(next);
    }
    out
}

/// Registers `subject` onto `template`. The returned field warps the subject:
/// `warped = field.apply(subject)`.
pub fn register_demons<T: Scalar>(
    subject: &Image<T>,
    template: &Image<T>,
    cfg: &DemonsConfig,
) -> Result<DemonsResult<T>> {
    cfg.validate()?;
    subject.ensure_same_shape(template, "demons")?;
    let (h, w) = subject.shape();
    let factor = 1usize << (cfg.levels - 1);
    if h % factor != 0 || w % factor != 0 || h / factor < 4 || w / factor < 4 {
        return Err(Error::Config(format!(
            "{} pyramid levels too deep for a {h}x{w} image (sides must be divisible by {factor} \
             and the coarsest level at least 4x4)",
            cfg.levels
        )));
    }
    let subjects = pyramid(subject, cfg.levels);
    let templates = pyramid(template, cfg.levels);
    let ssim_base = SsimParams::default();
    let mut trace = Vec::new();
    let mut iter = 0;
    let mut field: Option<WarpField<T>> = None;
    for level in (0..cfg.levels).rev() {
        let (s, t) = (&subjects[level], &templates[level]);
        let (lh, lw) = s.shape();
        let mut phi = match field.take() {
            None => WarpField::zeros(lh, lw),
            Some(f) => f.upsample2(lh, lw),
        };
        let params = ssim_base.fitted(lh, lw);
        for _ in 0..cfg.iterations_per_level {
            let warped = phi.apply(s)?;
            let u = demons_step(t, &warped, cfg)?;
            let n = cfg.squarings.unwrap_or_else(|| auto_squarings(&u));
            phi = smooth_field(&exp_field(&u, n).compose(&phi)?, cfg.smoothing_sigma);
            iter += 1;
            if cfg.record_trace {
                let warped = phi.apply(s)?;
                trace.push(TraceRow {
                    iter,
                    level,
                    mse: mse(&warped, t)?,
                    ssim: ssim(&warped, t, &params)?,
                });
            }
        }
        field = Some(phi);
    }
    let field = field.unwrap();
    let warped = field.apply(subject)?;
    Ok(DemonsResult {
        field,
        warped,
        trace,
    })
}
