//! Three trainings that differ only in the loss.

use std::path::{Path, PathBuf};

use deepwarp_core::dataset::Dataset;
use deepwarp_core::netpbm::atomic_write;
use deepwarp_core::rng::substream;
use deepwarp_core::Result;
use deepwarp_nn::{train, LossMode, TrainConfig, TrainOutcome, UNetConfig, UNetModel};
use rayon::prelude::*;

pub struct AblationRun {
    pub mode: LossMode,
    pub outcome: TrainOutcome<f32>,
    /// Where the epoch history was written, if an output directory was given.
    pub csv_path: Option<PathBuf>,
}

pub fn ablation_csv_name(mode: LossMode) -> String {
    format!("ablation_{}.csv", mode.as_str())
}

/// Trains one model per loss mode from the same initialization (drawn from
/// the `init` substream of `base.seed`) and the same shuffling and dropout
/// streams. Writes `ablation_<mode>.csv` histories into `out_dir` if given.
pub fn run_loss_ablation(
    ds: &Dataset<f32>,
    model_cfg: UNetConfig,
    base: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRun>> {
    base.validate()?;
    let init = UNetModel::<f32>::build(model_cfg, &mut substream(base.seed, "init"))?;
    LossMode::ALL
        .par_iter()
        .map(|&mode| {
            let tc = TrainConfig {
                loss_mode: mode,
                ..base.clone()
            };
            let outcome = train(init.clone(), ds, &tc)?;
            let csv_path = match out_dir {
                Some(dir) => {
                    let path = dir.join(ablation_csv_name(mode));
                    atomic_write(&path, outcome.history.to_csv().as_bytes())?;
                    Some(path)
                }
                None => None,
            };
            Ok(AblationRun {
                mode,
                outcome,
                csv_path,
            })
        })
        .collect()
}
