//! Desk-scale experiment drivers and their CSV/ASCII outputs.
//!
//! Timed regions cover only the registration call itself (network forward
//! plus warp, or one full demons run); metrics, file output and model
//! loading happen outside the clock.

pub mod ablation;
pub mod progression;
pub mod record;
pub mod timing;

use deepwarp_core::dataset::{Dataset, Split};
use deepwarp_core::{Image, Scalar};

pub use ablation::{run_loss_ablation, AblationRun};
pub use progression::{progression_from_models, snapshot_progression, ProgressionPoint};
pub use record::{render_report, speed_ratio, summarize, BenchRecord, Summary};
pub use timing::{bench_demons_sweep, bench_inference, DemonsGrid};

/// A subject/template pair with its identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair<T = f32> {
    pub pair_id: String,
    pub subject: Image<T>,
    pub template: Image<T>,
}

/// Every pair of one split, in dataset order.
pub fn eval_pairs<T: Scalar>(ds: &Dataset<T>, split: Split) -> Vec<EvalPair<T>> {
    ds.split(split)
        .map(|e| EvalPair {
            pair_id: e.pair_id.clone(),
            subject: e.pair.subject.clone(),
            template: e.pair.template.clone(),
        })
        .collect()
}
