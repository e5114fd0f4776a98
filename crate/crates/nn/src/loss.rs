//! Differentiable image similarity built from graph primitives.
//!
//! Values agree with [`deepwarp_core::metrics`]; window sums accumulate in `f64`.

use std::fmt;
use std::str::FromStr;

use deepwarp_core::{Error, LossWeights, Result, SsimParams};

use crate::graph::{Graph, Var};
use crate::real::Real;

/// Mean squared difference of two equally shaped nodes.
pub fn mse<T: Real>(g: &mut Graph<'_, T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d2 = g.mul(d, d)?;
    Ok(g.mean(d2))
}

/// Mean windowed SSIM of two `[H, W, 1]` nodes (valid windows only).
pub fn ssim<T: Real>(g: &mut Graph<'_, T>, x: Var, y: Var, p: &SsimParams) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!("ssim expects [H, W, 1], got {shape:?}")));
    }
    p.validate(shape[0], shape[1])?;
    let taps = p.window_taps();
    let (c1, c2) = (T::of_f64(p.c1()), T::of_f64(p.c2()));

    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let mx = g.filter_valid(x, &taps)?;
    let my = g.filter_valid(y, &taps)?;
    let exx = g.filter_valid(xx, &taps)?;
    let eyy = g.filter_valid(yy, &taps)?;
    let exy = g.filter_valid(xy, &taps)?;

    let mxmy = g.mul(mx, my)?;
    let mx2 = g.mul(mx, mx)?;
    let my2 = g.mul(my, my)?;
    let msq = g.add(mx2, my2)?;

    let lum_num = g.scale(mxmy, T::of_f64(2.0));
    let lum_num = g.shift(lum_num, c1);
    let cov = g.sub(exy, mxmy)?;
    let cs_num = g.scale(cov, T::of_f64(2.0));
    let cs_num = g.shift(cs_num, c2);
    let lum_den = g.shift(msq, c1);
    let second = g.add(exx, eyy)?;
    let var_sum = g.sub(second, msq)?;
    let cs_den = g.shift(var_sum, c2);

    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// `alpha * MSE - beta * (SSIM - 1)`
    MseSsim,
    /// `1 - SSIM`
    SsimOnly,
    /// `MSE`
    MseOnly,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::MseSsim, LossMode::SsimOnly, LossMode::MseOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::MseSsim => "msessim",
            LossMode::SsimOnly => "ssim_only",
            LossMode::MseOnly => "mse_only",
        }
    }

    /// Scalar loss from precomputed components.
    pub fn evaluate(&self, mse: f64, ssim: f64, w: &LossWeights) -> f64 {
        match self {
            LossMode::MseSsim => w.combine(mse, ssim),
            LossMode::SsimOnly => 1.0 - ssim,
            LossMode::MseOnly => mse,
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss mode '{s}' (msessim, ssim_only, mse_only)")))
    }
}

/// Graph nodes of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub loss: Var,
    pub mse: Var,
    pub ssim: Var,
}

/// Builds MSE, SSIM and the combined loss between warped `w` and template `t`.
pub fn registration_loss<T: Real>(
    g: &mut Graph<'_, T>,
    w: Var,
    t: Var,
    mode: LossMode,
    weights: &LossWeights,
    p: &SsimParams,
) -> Result<LossVars> {
    weights.validate()?;
    let m = mse(g, w, t)?;
    let s = ssim(g, w, t, p)?;
    let loss = match mode {
        LossMode::MseSsim => {
            let a = g.scale(m, T::of_f64(weights.alpha));
            let b = g.scale(s, T::of_f64(-weights.beta));
            let sum = g.add(a, b)?;
            g.shift(sum, T::of_f64(weights.beta))
        }
        LossMode::SsimOnly => {
            let neg = g.scale(s, -T::one());
            g.shift(neg, T::one())
        }
        LossMode::MseOnly => m,
    };
    Ok(LossVars { loss, mse: m, ssim: s })
}
