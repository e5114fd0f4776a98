//! Image similarity: MSE, Gaussian-windowed SSIM and the weighted MSE-SSIM loss.
//!
//! All accumulations run in `f64` regardless of the image scalar type.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Windowed SSIM settings. Defaults: 11x11 Gaussian, sigma 1.5, k1 0.01,
/// k2 0.03, dynamic range 1.0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window_size: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let ws = self.window_size;
        if ws < 3 || ws % 2 == 0 {
            return Err(Error::Config(format!(
                "SSIM window must be odd and >= 3, got {ws}"
            )));
        }
        if ws > height || ws > width {
            return Err(Error::Dimension(format!(
                "SSIM window {ws} does not fit a {height}x{width} image"
            )));
        }
        if !(self.c1() > 0.0 && self.c2() > 0.0) || !(self.gaussian_sigma > 0.0) {
            return Err(Error::Config(
                "SSIM constants and sigma must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Same parameters with the window shrunk, if needed, to the largest odd
    /// size that fits `height x width`.
    pub fn fitted(&self, height: usize, width: usize) -> Self {
        let mut ws = self.window_size.min(height).min(width);
        if ws % 2 == 0 {
            ws = ws.saturating_sub(1);
        }
        Self {
            window_size: ws.max(3),
            ..*self
        }
    }

    /// Normalized 1D Gaussian taps; the 2D window is their outer product.
    pub fn window_taps(&self) -> Vec<f64> {
        gaussian_taps(self.window_size, self.gaussian_sigma)
    }
}

pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|k| {
            let d = k as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Weights of the MSE-SSIM loss `alpha * MSE - beta * (SSIM - 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let lw = Self { alpha, beta };
        lw.validate()?;
        Ok(lw)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || (self.alpha == 0.0 && self.beta == 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative and not both zero (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// Combines precomputed components.
    #[inline]
    pub fn combine(&self, mse: f64, ssim: f64) -> f64 {
        self.alpha * mse - self.beta * (ssim - 1.0)
    }
}

pub fn mse<T: Scalar>(w: &Image<T>, t: &Image<T>) -> Result<f64> {
    w.ensure_same_shape(t, "mse")?;
    let sum: f64 = w
        .data()
        .iter()
        .zip(t.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(sum / w.len() as f64)
}

/// Valid-mode separable correlation of a row-major grid with `taps` along
/// both axes. Output is `(h - k + 1) x (w - k + 1)`.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        let line = &src[i * w..(i + 1) * w];
        for j in 0..ow {
            rows[i * ow + j] = taps.iter().zip(&line[j..j + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for (t, &c) in taps.iter().enumerate() {
            let src_row = &rows[(i + t) * ow..(i + t + 1) * ow];
            for (o, &v) in out[i * ow..(i + 1) * ow].iter_mut().zip(src_row) {
                *o += c * v;
            }
        }
    }
    out
}

/// Per-window SSIM over every valid window centre: `(rows, cols, values)`.
pub fn ssim_valid<T: Scalar>(
    w: &Image<T>,
    t: &Image<T>,
    p: &SsimParams,
) -> Result<(usize, usize, Vec<f64>)> {
    w.ensure_same_shape(t, "ssim")?;
    let (h, wd) = w.shape();
    p.validate(h, wd)?;
    let x: Vec<f64> = w.data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = t.data().iter().map(|v| v.as_f64()).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let taps = p.window_taps();
    let mu_x = filter_valid(&x, h, wd, &taps);
    let mu_y = filter_valid(&y, h, wd, &taps);
    let e_xx = filter_valid(&xx, h, wd, &taps);
    let e_yy = filter_valid(&yy, h, wd, &taps);
    let e_xy = filter_valid(&xy, h, wd, &taps);
    let (c1, c2) = (p.c1(), p.c2());
    let vals = (0..mu_x.len())
        .map(|k| {
            let (mx, my) = (mu_x[k], mu_y[k]);
            let sxx = e_xx[k] - mx * mx;
            let syy = e_yy[k] - my * my;
            let sxy = e_xy[k] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        })
        .collect();
    let k = p.window_size;
    Ok((h + 1 - k, wd + 1 - k, vals))
}

/// Mean SSIM over all fully-contained Gaussian windows.
pub fn ssim<T: Scalar>(w: &Image<T>, t: &Image<T>, p: &SsimParams) -> Result<f64> {
    let (_, _, vals) = ssim_valid(w, t, p)?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Local SSIM laid out at window centres; border pixels copy the nearest
/// valid centre.
pub fn ssim_map<T: Scalar>(w: &Image<T>, t: &Image<T>, p: &SsimParams) -> Result<Image<f64>> {
    let (vh, vw, vals) = ssim_valid(w, t, p)?;
    let r = p.window_size / 2;
    let (h, wd) = w.shape();
    Ok(Image::from_fn(h, wd, |i, j| {
        let vi = i.saturating_sub(r).min(vh - 1);
        let vj = j.saturating_sub(r).min(vw - 1);
        vals[vi * vw + vj]
    }))
}

/// `alpha * MSE - beta * (SSIM - 1)`; zero for identical images.
pub fn msessim_loss<T: Scalar>(
    w: &Image<T>,
    t: &Image<T>,
    lw: &LossWeights,
    p: &SsimParams,
) -> Result<f64> {
    lw.validate()?;
    Ok(lw.combine(mse(w, t)?, ssim(w, t, p)?))
}
