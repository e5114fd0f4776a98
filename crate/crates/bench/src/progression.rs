//! Registration quality of training snapshots on a fixed pair set.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deepwarp_core::metrics::{mse, ssim};
use deepwarp_core::netpbm::{atomic_write, save_pgm, write_overlay};
use deepwarp_core::{Error, Result, SsimParams};
use deepwarp_nn::checkpoint::load_model;
use deepwarp_nn::UNetModel;

use crate::record::{mean_std, to_csv, BenchRecord};
use crate::EvalPair;

pub const PROGRESSION_CSV: &str = "progression.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct ProgressionPoint {
    pub epoch: usize,
    pub records: Vec<BenchRecord>,
    pub mean_ssim: f64,
    pub mean_mse: f64,
}

/// Loads each `(epoch, checkpoint)` and evaluates it. Epochs must be
/// non-decreasing.
pub fn snapshot_progression(
    checkpoints: &[(usize, PathBuf)],
    pairs: &[EvalPair<f32>],
    out_dir: Option<&Path>,
) -> Result<Vec<ProgressionPoint>> {
    let models = checkpoints
        .iter()
        .map(|(e, p)| load_model::<f32>(p).map(|m| (*e, m)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(usize, &UNetModel<f32>)> = models.iter().map(|(e, m)| (*e, m)).collect();
    progression_from_models(&refs, pairs, out_dir)
}

/// For each snapshot and pair: the warped image, a green/magenta overlay
/// against the template, and metrics. With `out_dir` set, writes
/// `epoch<E>_<pair>_warped.pgm`, `epoch<E>_<pair>_overlay.ppm` and one
/// `progression.csv` for all snapshots.
pub fn progression_from_models(
    models: &[(usize, &UNetModel<f32>)],
    pairs: &[EvalPair<f32>],
    out_dir: Option<&Path>,
) -> Result<Vec<ProgressionPoint>> {
    if models.is_empty() || pairs.is_empty() {
        return Err(Error::Config("progression needs at least one checkpoint and one pair".into()));
    }
    if models.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Config("checkpoint epochs must be non-decreasing".into()));
    }
    let mut points = Vec::with_capacity(models.len());
    for &(epoch, model) in models {
        let mut records = Vec::with_capacity(pairs.len());
        for p in pairs {
            let (h, w) = p.subject.shape();
            let sp = SsimParams::default().fitted(h, w);
            let t0 = Instant::now();
            let (_, warped) = model.forward_register(&p.subject, &p.template, None)?;
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            if let Some(dir) = out_dir {
                save_pgm(&warped, dir.join(format!("epoch{epoch}_{}_warped.pgm", p.pair_id)))?;
                write_overlay(
                    &warped,
                    &p.template,
                    dir.join(format!("epoch{epoch}_{}_overlay.ppm", p.pair_id)),
                )?;
            }
            let r = BenchRecord {
                method: "unet".into(),
                params: format!("epoch={epoch}"),
                pair_id: p.pair_id.clone(),
                wall_time_ms: ms,
                ssim_before: ssim(&p.subject, &p.template, &sp)?,
                ssim_after: ssim(&warped, &p.template, &sp)?,
                mse_before: mse(&p.subject, &p.template)?,
                mse_after: mse(&warped, &p.template)?,
            };
            r.validate()?;
            records.push(r);
        }
        let ssims: Vec<f64> = records.iter().map(|r| r.ssim_after).collect();
        let mses: Vec<f64> = records.iter().map(|r| r.mse_after).collect();
        points.push(ProgressionPoint {
            epoch,
            mean_ssim: mean_std(&ssims).0,
            mean_mse: mean_std(&mses).0,
            records,
        });
    }
    if let Some(dir) = out_dir {
        let all: Vec<BenchRecord> = points.iter().flat_map(|p| p.records.clone()).collect();
        atomic_write(dir.join(PROGRESSION_CSV), to_csv(&all).as_bytes())?;
    }
    Ok(points)
}

/// One line per snapshot: epoch, mean SSIM and mean MSE.
pub fn render_progression(points: &[ProgressionPoint]) -> String {
    let mut out = String::from("epoch  mean_ssim    mean_mse\n");
    for p in points {
        let _ = writeln!(out, "{:>5} {:>10.4} {:>11.6}", p.epoch, p.mean_ssim, p.mean_mse);
    }
    out
}
