//! Batch-1 training with Adam, per-epoch history and optional snapshots.

use std::fmt::Write as _;

use deepwarp_core::dataset::{Dataset, Split};
use deepwarp_core::metrics::{mse, ssim};
use deepwarp_core::rng::substream;
use deepwarp_core::{Error, Image, LossWeights, Result, SsimParams};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::{adam_step, AdamState};
use crate::graph::Graph;
use crate::loss::{registration_loss, LossMode};
use crate::real::Real;
use crate::unet::UNetModel;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub loss_mode: LossMode,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// Share of base images held out when a dataset is built for training.
    pub validation_fraction: f64,
    /// Epochs (1-based) after which a copy of the model is kept.
    pub snapshot_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 100,
            loss_mode: LossMode::MseSsim,
            alpha: 10.0,
            beta: 1.0,
            seed: 0,
            validation_fraction: 0.2,
            snapshot_epochs: Vec::new(),
        }
    }
}

impl TrainConfig {
    /// 100 epochs at lr 1e-4.
    pub fn paper() -> Self {
        Self::default()
    }

    /// 30 epochs at lr 1e-4.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::Config(format!("unknown preset '{name}' (paper, desk)"))),
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if let Some(&e) = self.snapshot_epochs.iter().find(|&&e| e == 0 || e > self.epochs) {
            return Err(Error::Config(format!(
                "snapshot epoch {e} outside 1..={}",
                self.epochs
            )));
        }
        self.weights().validate()
    }
}

/// Loss components of one optimization step, measured on the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub mse: f64,
    pub ssim: f64,
}

/// Owns the model and optimizer state between steps.
pub struct Trainer<T> {
    pub model: UNetModel<T>,
    pub adam: AdamState<T>,
    pub mode: LossMode,
    pub weights: LossWeights,
    pub ssim_params: SsimParams,
    dropout_rng: ChaCha8Rng,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: UNetModel<T>, tc: &TrainConfig) -> Result<Self> {
        tc.validate()?;
        let n = model.config.input_size;
        let adam = AdamState::new(&model.params, tc.lr);
        Ok(Self {
            model,
            adam,
            mode: tc.loss_mode,
            weights: tc.weights(),
            ssim_params: SsimParams::default().fitted(n, n),
            dropout_rng: substream(tc.seed, "dropout"),
        })
    }

    /// Forward with dropout, backward, one Adam update.
    pub fn step(&mut self, s: &Image<T>, t: &Image<T>) -> Result<StepStats> {
        let n = self.model.config.input_size;
        let (grads, stats) = {
            let mut g = Graph::new(&self.model.params);
            let fv = self.model.forward(&mut g, s, t, Some(&mut self.dropout_rng))?;
            let tv = g.input(crate::tensor::Tensor::new(&[n, n, 1], t.data().to_vec())?);
            let lv = registration_loss(&mut g, fv.warped, tv, self.mode, &self.weights, &self.ssim_params)?;
            let stats = StepStats {
                loss: g.scalar(lv.loss).as_f64(),
                mse: g.scalar(lv.mse).as_f64(),
                ssim: g.scalar(lv.ssim).as_f64(),
            };
            (g.backward(lv.loss), stats)
        };
        if !stats.loss.is_finite() {
            return Err(Error::Degenerate(format!("loss became {}", stats.loss)));
        }
        adam_step(&mut self.model.params, &grads.params, &mut self.adam)?;
        Ok(stats)
    }
}

/// Before/after similarity of one registered pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEval {
    pub ssim_before: f64,
    pub ssim_after: f64,
    pub mse_before: f64,
    pub mse_after: f64,
}

/// Registers every `(subject, template)` pair with dropout off, in parallel.
pub fn evaluate<T: Real>(model: &UNetModel<T>, pairs: &[(&Image<T>, &Image<T>)]) -> Result<Vec<PairEval>> {
    let n = model.config.input_size;
    let p = SsimParams::default().fitted(n, n);
    pairs
        .par_iter()
        .map(|&(s, t)| {
            let (_, w) = model.forward_register(s, t, None)?;
            Ok(PairEval {
                ssim_before: ssim(s, t, &p)?,
                ssim_after: ssim(&w, t, &p)?,
                mse_before: mse(s, t)?,
                mse_after: mse(&w, t)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub train_ssim: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub val_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_mse,train_ssim,val_loss,val_mse,val_ssim";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_mse, r.train_ssim, r.val_loss, r.val_mse, r.val_ssim
            )
            .unwrap();
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

pub struct TrainOutcome<T> {
    pub model: UNetModel<T>,
    pub history: History,
    pub snapshots: Vec<(usize, UNetModel<T>)>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Trains on the dataset's training split, one pair per step in a shuffled
/// order each epoch. Train metrics are running means over the epoch's
/// forward passes; validation metrics come from a dropout-free pass after the
/// epoch. The loss only ever compares the warped subject with the template.
pub fn train<T: Real>(model: UNetModel<T>, ds: &Dataset<T>, tc: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(model, ds, tc, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Real>(
    model: UNetModel<T>,
    ds: &Dataset<T>,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    let train_set: Vec<_> = ds.split(Split::Train).collect();
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let n = model.config.input_size;
    if ds.size != n {
        return Err(Error::Dimension(format!(
            "dataset images are {0}x{0}, model expects {n}x{n}",
            ds.size
        )));
    }
    let val_pairs: Vec<_> = ds
        .split(Split::Validation)
        .map(|e| (&e.pair.subject, &e.pair.template))
        .collect();
    let mut trainer = Trainer::new(model, tc)?;
    let mut shuffle = substream(tc.seed, "shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut snapshots = Vec::new();
    let w = tc.weights();

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle);
        let mut stats = Vec::with_capacity(order.len());
        for &k in &order {
            let p = &train_set[k].pair;
            stats.push(trainer.step(&p.subject, &p.template)?);
        }
        let evals = evaluate(&trainer.model, &val_pairs)?;
        let val_mse = mean(evals.iter().map(|e| e.mse_after));
        let val_ssim = mean(evals.iter().map(|e| e.ssim_after));
        let rec = EpochRecord {
            epoch,
            train_loss: mean(stats.iter().map(|s| s.loss)),
            train_mse: mean(stats.iter().map(|s| s.mse)),
            train_ssim: mean(stats.iter().map(|s| s.ssim)),
            val_loss: mean(evals.iter().map(|e| tc.loss_mode.evaluate(e.mse_after, e.ssim_after, &w))),
            val_mse,
            val_ssim,
        };
        on_epoch(&rec);
        history.records.push(rec);
        if tc.snapshot_epochs.contains(&epoch) {
            snapshots.push((epoch, trainer.model.clone()));
        }
    }
    Ok(TrainOutcome {
        model: trainer.model,
        history,
        snapshots,
    })
}
