//! Observation tokenization and set aggregation into per-variable or
//! per-patch embeddings.

mod baseline;
mod conventional;
mod init;
mod quite;
mod tokens;

use std::fmt;
use std::str::FromStr;

pub use baseline::{masked_mean, BaselineEmbedding, BaselineKind};
pub use conventional::{bin_values, ConventionalEmbedding};
pub use init::{init_queries, QueryInit};
pub use quite::{aggregate, aggregate_patch, aggregate_variable, QueryTokenBank, QuiteEmbedding};
pub use tokens::{TimeEmbedder, Tokenizer, ValueEmbedder};

pub use crate::nn::AttnBlock;

use crate::data::PaddedBatch;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// One embedding per variable, or one per patch–variable pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingLevel {
    Variable,
    Patch,
}

/// Padded observations as constant tensors `[B × M × N × L]`, with
/// timestamps already rescaled.
#[derive(Debug, Clone)]
pub struct ObservationInput {
    pub shape: [usize; 4],
    pub values: Tensor,
    pub times: Tensor,
    pub masks: Tensor,
    pub mask_values: Vec<f64>,
    /// Position of each slot inside its patch, in `[0, 1)`.
    pub offsets: Vec<f64>,
}

impl ObservationInput {
    /// Timestamps are mapped to `[0, 1]` over `[window_start, window_end]`.
    pub fn from_batch(batch: &PaddedBatch, window_start: f64, window_end: f64) -> Result<Self> {
        Self::from_parts(
            batch.shape(),
            batch.values.clone(),
            batch.scaled_times(window_start, window_end),
            batch.masks.clone(),
            batch.offsets.clone(),
        )
    }

    pub fn from_parts(shape: [usize; 4], values: Vec<f64>, times: Vec<f64>, masks: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n || times.len() != n || masks.len() != n || offsets.len() != n {
            return Err(Error::invalid(
                "observation_input",
                "array lengths do not match the batch shape",
            ));
        }
        Ok(ObservationInput {
            shape,
            values: Tensor::new(&shape, values)?,
            times: Tensor::new(&shape, times)?,
            masks: Tensor::new(&shape, masks.clone())?,
            mask_values: masks,
            offsets,
        })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn patches(&self) -> usize {
        self.shape[1]
    }

    pub fn variables(&self) -> usize {
        self.shape[2]
    }

    pub fn slots(&self) -> usize {
        self.shape[3]
    }

    /// Number of `(b, m, n)` cells.
    pub fn cells(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        self.mask_values
            .chunks(self.slots())
            .map(|c| c.iter().filter(|&&m| m != 0.0).count())
            .collect()
    }

    pub fn cell_valid(&self) -> Vec<f64> {
        self.cell_counts().iter().map(|&c| if c > 0 { 1.0 } else { 0.0 }).collect()
    }
}

/// Embeddings laid out `[B × M × N × D]`; variable level has `M = 1`.
#[derive(Debug, Clone)]
pub struct EmbeddingOutput {
    pub level: EmbeddingLevel,
    pub embeddings: Tensor,
    /// `[B × M × N]`, 0 where the cell had no observations.
    pub patch_valid: Vec<f64>,
}

impl EmbeddingOutput {
    pub fn batch(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn patches(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn variables(&self) -> usize {
        self.embeddings.shape()[2]
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[3]
    }

    /// `[B × N × D]`; only meaningful for a single patch.
    pub fn variable_view(&self) -> Result<Tensor> {
        if self.patches() != 1 {
            return Err(Error::shape(
                "variable_view",
                self.embeddings.shape(),
                &[self.batch(), 1, self.variables(), self.dim()],
            ));
        }
        self.embeddings.reshape(&[self.batch(), self.variables(), self.dim()])
    }

    /// Embeddings of one batch element: `[N × D]` at variable level,
    /// `[M × N × D]` at patch level.
    pub fn instance(&self, b: usize) -> Result<Tensor> {
        let one = self.embeddings.narrow(0, b, 1)?;
        match self.level {
            EmbeddingLevel::Variable => one.reshape(&[self.variables(), self.dim()]),
            EmbeddingLevel::Patch => one.reshape(&[self.patches(), self.variables(), self.dim()]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingKind {
    Conventional,
    Add,
    Concat,
    MeanPool,
    Quite,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 5] = [
        EmbeddingKind::Conventional,
        EmbeddingKind::Add,
        EmbeddingKind::Concat,
        EmbeddingKind::MeanPool,
        EmbeddingKind::Quite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::Conventional => "conventional",
            EmbeddingKind::Add => "add",
            EmbeddingKind::Concat => "concat",
            EmbeddingKind::MeanPool => "meanpool",
            EmbeddingKind::Quite => "quite",
        }
    }
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EmbeddingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown embedding `{s}`")))
    }
}

/// Settings an embedding needs at construction.
#[derive(Debug, Clone)]
pub struct EmbeddingSpec {
    pub kind: EmbeddingKind,
    pub level: EmbeddingLevel,
    pub patches: usize,
    pub variables: usize,
    pub dim: usize,
    pub heads: usize,
    pub query_init: QueryInit,
    /// Grid width of the conventional embedding.
    pub conv_bins: usize,
}

#[derive(Debug, Clone)]
pub enum Embedding {
    Conventional(ConventionalEmbedding),
    Baseline(BaselineEmbedding),
    Quite(QuiteEmbedding),
}

impl Embedding {
    /// Registers parameters under `embed.*`; `time` is shared with the caller.
    pub fn build(ps: &mut ParamStore, spec: &EmbeddingSpec, time: &TimeEmbedder) -> Result<Self> {
        let tokenizer = |ps: &mut ParamStore| -> Result<Tokenizer> {
            Ok(Tokenizer {
                time: time.clone(),
                value: ValueEmbedder::new(ps, "embed.value", spec.dim)?,
            })
        };
        Ok(match spec.kind {
            EmbeddingKind::Conventional => Embedding::Conventional(ConventionalEmbedding::new(
                ps,
                "embed.linear",
                spec.level,
                spec.conv_bins,
                spec.dim,
            )?),
            EmbeddingKind::Add => Embedding::Baseline(BaselineEmbedding::add(tokenizer(ps)?, spec.level)),
            EmbeddingKind::Concat => Embedding::Baseline(BaselineEmbedding::concat(ps, "embed.concat", spec.level, spec.dim)?),
            EmbeddingKind::MeanPool => {
                let block = AttnBlock::new(ps, "embed.block", spec.dim, spec.heads)?;
                Embedding::Baseline(BaselineEmbedding::mean_pool(tokenizer(ps)?, block, spec.level))
            }
            EmbeddingKind::Quite => {
                let tokenizer = tokenizer(ps)?;
                let m = if spec.level == EmbeddingLevel::Variable {
                    1
                } else {
                    spec.patches
                };
                let queries = QueryTokenBank::new(ps, "embed.queries", spec.level, m, spec.variables, spec.dim, spec.query_init)?;
                let block = AttnBlock::new(ps, "embed.block", spec.dim, spec.heads)?;
                Embedding::Quite(QuiteEmbedding {
                    tokenizer,
                    queries,
                    block,
                })
            }
        })
    }

    pub fn kind(&self) -> EmbeddingKind {
        match self {
            Embedding::Conventional(_) => EmbeddingKind::Conventional,
            Embedding::Baseline(b) => match b.kind {
                BaselineKind::Add => EmbeddingKind::Add,
                BaselineKind::Concat => EmbeddingKind::Concat,
                BaselineKind::MeanPool => EmbeddingKind::MeanPool,
            },
            Embedding::Quite(_) => EmbeddingKind::Quite,
        }
    }

    pub fn forward(&self, input: &ObservationInput) -> Result<EmbeddingOutput> {
        match self {
            Embedding::Conventional(e) => e.forward(input),
            Embedding::Baseline(e) => e.forward(input),
            Embedding::Quite(e) => e.forward(input),
        }
    }
}

#[cfg(test)]
mod tests;
