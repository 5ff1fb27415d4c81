//! Irregular multivariate time series: records, CSV, synthetic generation,
//! forecast splits, patching, normalization and padding.

mod batch;
mod csv;
mod instance;
mod manifest;
mod normalize;
mod patch;
mod split;
mod synthetic;

pub use batch::{batch_pad, pad_queries, PaddedBatch, QueryBatch};
pub use csv::{fmt_real, load_csv, read_csv, save_csv, write_csv, HEADER};
pub use instance::{ImtsInstance, Observation};
pub use manifest::DatasetManifest;
pub use normalize::Normalizer;
pub use patch::{assign_patches, PatchGrid, PatchSpec};
pub use split::{split_forecast, ForecastSplit, Query};
pub use synthetic::{generate_instance, generate_synthetic, instance_rng, SyntheticConfig};

use rand::Rng;

/// Drops each observation independently with probability `ratio`.
pub fn thin_observations<R: Rng>(inst: &ImtsInstance, ratio: f64, rng: &mut R) -> crate::Result<ImtsInstance> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(crate::Error::Config(format!("removal ratio must lie in [0, 1), got {ratio}")));
    }
    let mut out = inst.clone();
    if ratio == 0.0 {
        return Ok(out);
    }
    for obs in out.variables.iter_mut() {
        obs.retain(|_| rng.random::<f64>() >= ratio);
    }
    Ok(out)
}
