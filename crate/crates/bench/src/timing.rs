//! Timed registration runs. Each timed call executes on a dedicated
//! single-thread pool so internal parallelism cannot skew the numbers.

use std::time::Instant;

use deepwarp_core::demons::{register_demons, DemonsConfig};
use deepwarp_core::metrics::{mse, ssim};
use deepwarp_core::{Error, Image, Result, Scalar, SsimParams};
use deepwarp_nn::{Real, UNetModel};

use crate::record::BenchRecord;
use crate::EvalPair;

pub(crate) fn single_thread<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build timing pool: {e}")))?;
    Ok(pool.install(f))
}

struct Before {
    ssim: f64,
    mse: f64,
    params: SsimParams,
}

fn before<T: Scalar>(p: &EvalPair<T>) -> Result<Before> {
    p.subject.ensure_same_shape(&p.template, &p.pair_id)?;
    let (h, w) = p.subject.shape();
    let params = SsimParams::default().fitted(h, w);
    Ok(Before {
        ssim: ssim(&p.subject, &p.template, &params)?,
        mse: mse(&p.subject, &p.template)?,
        params,
    })
}

fn record<T: Scalar>(
    method: &str,
    params: String,
    p: &EvalPair<T>,
    b: &Before,
    ms: f64,
    warped: &Image<T>,
) -> Result<BenchRecord> {
    let r = BenchRecord {
        method: method.into(),
        params,
        pair_id: p.pair_id.clone(),
        wall_time_ms: ms,
        ssim_before: b.ssim,
        ssim_after: ssim(warped, &p.template, &b.params)?,
        mse_before: b.mse,
        mse_after: mse(warped, &p.template)?,
    };
    r.validate()?;
    Ok(r)
}

/// Times `repeats` forward passes (network plus warp) per pair after one
/// untimed warm-up pass. One record per timed run.
pub fn bench_inference<T: Real>(
    model: &UNetModel<T>,
    pairs: &[EvalPair<T>],
    repeats: usize,
) -> Result<Vec<BenchRecord>> {
    if repeats < 1 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let n = model.config.input_size;
    for p in pairs {
        if p.subject.shape() != (n, n) || p.template.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "pair {} is {}x{}, model expects {n}x{n}",
                p.pair_id,
                p.subject.height(),
                p.subject.width()
            )));
        }
    }
    let params = format!(
        "size={n};depth={};width={}",
        model.config.depth, model.config.base_width
    );
    single_thread(|| {
        let mut out = Vec::with_capacity(pairs.len() * repeats);
        for p in pairs {
            let b = before(p)?;
            model.forward_register(&p.subject, &p.template, None)?;
            for _ in 0..repeats {
                let t0 = Instant::now();
                let (_, warped) = model.forward_register(&p.subject, &p.template, None)?;
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                out.push(record("unet", params.clone(), p, &b, ms, &warped)?);
            }
        }
        Ok(out)
    })?
}

/// Iteration counts (per level) crossed with pyramid depths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemonsGrid {
    pub iterations: Vec<usize>,
    pub levels: Vec<usize>,
}

impl DemonsGrid {
    pub fn new(iterations: Vec<usize>, levels: Vec<usize>) -> Result<Self> {
        let g = Self { iterations, levels };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations.is_empty() || self.levels.is_empty() {
            return Err(Error::Config("demons grid needs iterations and levels".into()));
        }
        if self.iterations.contains(&0) || self.levels.contains(&0) {
            return Err(Error::Config("demons grid values must be >= 1".into()));
        }
        Ok(())
    }

    /// `(iterations, levels)` in sweep order: levels outer, iterations inner.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.levels
            .iter()
            .flat_map(|&l| self.iterations.iter().map(move |&i| (i, l)))
            .collect()
    }
}

pub fn demons_params(iters: usize, levels: usize) -> String {
    format!("iters={iters};levels={levels}")
}

/// Runs demons at every grid point on every pair. `base` supplies the
/// remaining settings; per-iteration tracing is switched off so only the
/// registration itself is timed.
pub fn bench_demons_sweep<T: Scalar>(
    pairs: &[EvalPair<T>],
    grid: &DemonsGrid,
    base: &DemonsConfig,
) -> Result<Vec<BenchRecord>> {
    grid.validate()?;
    let configs: Vec<(usize, usize, DemonsConfig)> = grid
        .points()
        .into_iter()
        .map(|(iters, levels)| {
            let cfg = DemonsConfig {
                levels,
                iterations_per_level: iters,
                record_trace: false,
                ..base.clone()
            };
            cfg.validate().map(|()| (iters, levels, cfg))
        })
        .collect::<Result<_>>()?;
    single_thread(|| {
        if let (Some(p), Some((_, _, cfg))) = (pairs.first(), configs.first()) {
            register_demons(&p.subject, &p.template, cfg)?;
        }
        let befores = pairs.iter().map(before).collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(pairs.len() * configs.len());
        for (iters, levels, cfg) in &configs {
            for (p, b) in pairs.iter().zip(&befores) {
                let t0 = Instant::now();
                let res = register_demons(&p.subject, &p.template, cfg)?;
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                out.push(record("demons", demons_params(*iters, *levels), p, b, ms, &res.warped)?);
            }
        }
        Ok(out)
    })?
}
