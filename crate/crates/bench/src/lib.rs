//! Shared fixtures for the criterion benches.

use quite_core::data::{generate_synthetic, split_forecast, ForecastSplit, SyntheticConfig};
use quite_core::embed::{EmbeddingKind, ObservationInput};
use quite_core::model::{Model, ModelConfig};

pub struct Fixture {
    pub model: Model,
    pub input: ObservationInput,
    pub splits: Vec<ForecastSplit>,
}

/// A model of width `dim` and a batch of `batch` synthetic histories.
pub fn fixture(embedding: EmbeddingKind, dim: usize, batch: usize) -> Fixture {
    let cfg = ModelConfig {
        embedding,
        dim,
        heads: 4,
        ..ModelConfig::default()
    };
    let model = Model::build(&cfg).expect("valid bench config");
    let insts = generate_synthetic(&SyntheticConfig {
        num_instances: batch,
        ..SyntheticConfig::default()
    })
    .expect("valid synthetic config");
    let splits: Vec<ForecastSplit> = insts
        .iter()
        .map(|i| split_forecast(i, cfg.history_end).expect("history is nonempty"))
        .collect();
    let histories: Vec<_> = splits.iter().map(|s| &s.history).collect();
    let input = model.observation_input(&histories).expect("consistent batch");
    Fixture { model, input, splits }
}
