//! Training, evaluation, experiment runners and report writers.

mod cost;
mod dataset;
mod emit;
mod experiments;
mod gradsuite;
mod metrics;
mod train;

pub use cost::*;
pub use dataset::{split_indices, ClassifyData, ForecastData, SplitIndices};
pub use emit::*;
pub use experiments::*;
pub use gradsuite::*;
pub use metrics::*;
pub use train::*;
