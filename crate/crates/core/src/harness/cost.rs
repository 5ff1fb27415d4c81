use crate::embed::{EmbeddingKind, EmbeddingLevel};
use crate::error::{Error, Result};
use crate::model::{EncoderKind, Model, ModelConfig, Task};

/// Sizes the cost model is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostExtents {
    pub batch: u64,
    /// Observations per variable, `L_v`.
    pub obs_per_variable: u64,
    /// Observations per patch, `L_p`.
    pub obs_per_patch: u64,
    /// Future queries per variable.
    pub pred_len: u64,
}

/// Embedding cost when each observation is projected on its own.
pub fn conventional_variable_cost(b: u64, n: u64, lv: u64, d: u64) -> u64 {
    b * n * lv * d
}

pub fn conventional_patch_cost(b: u64, m: u64, n: u64, lp: u64, d: u64) -> u64 {
    b * m * n * lp * d
}

/// Self-attention over `L_v + 1` tokens per variable.
pub fn query_variable_cost(b: u64, n: u64, lv: u64, d: u64) -> u64 {
    b * n * ((lv + 1).pow(2) * d + (lv + 1) * d * d)
}

pub fn query_patch_cost(b: u64, m: u64, n: u64, lp: u64, d: u64) -> u64 {
    b * m * n * ((lp + 1).pow(2) * d + (lp + 1) * d * d)
}

/// Attention over sequences of length `len`: score and mixing terms plus
/// projections.
fn attention_cost(sequences: u64, len: u64, d: u64) -> u64 {
    sequences * (len * len * d + len * d * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageCosts {
    pub tokenization: u64,
    pub aggregation: u64,
    pub encoder: u64,
    pub decoder: u64,
}

impl StageCosts {
    pub fn total(&self) -> u64 {
        self.tokenization + self.aggregation + self.encoder + self.decoder
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub params: usize,
    pub conventional_variable: u64,
    pub conventional_patch: u64,
    pub query_variable: u64,
    pub query_patch: u64,
    /// Dominant multiply-accumulate terms of one forward pass.
    pub stages: StageCosts,
}

pub fn estimate_cost(cfg: &ModelConfig, ext: &CostExtents) -> Result<CostReport> {
    cfg.validate()?;
    if ext.batch == 0 || ext.obs_per_variable == 0 || ext.obs_per_patch == 0 {
        return Err(Error::Config("cost extents must be positive".into()));
    }
    let (b, n, d) = (ext.batch, cfg.variables as u64, cfg.dim as u64);
    let m = cfg.num_patches()? as u64;
    let (cells, l) = match cfg.level() {
        EmbeddingLevel::Variable => (n, ext.obs_per_variable),
        EmbeddingLevel::Patch => (m * n, ext.obs_per_patch),
    };
    let tokenization = match cfg.embedding {
        EmbeddingKind::Conventional => 0,
        _ => b * cells * l * d,
    };
    let aggregation = match (cfg.embedding, cfg.level()) {
        (EmbeddingKind::Conventional, _) => b * cells * cfg.conv_bins()? as u64 * d,
        (EmbeddingKind::Add | EmbeddingKind::Concat, _) => b * cells * l * d,
        (EmbeddingKind::MeanPool, _) => attention_cost(b * cells, l, d),
        (EmbeddingKind::Quite, EmbeddingLevel::Variable) => query_variable_cost(b, n, ext.obs_per_variable, d),
        (EmbeddingKind::Quite, EmbeddingLevel::Patch) => query_patch_cost(b, m, n, ext.obs_per_patch, d),
    };
    let layers = cfg.layers as u64;
    let encoder = match cfg.encoder {
        EncoderKind::Hierarchical => layers * (attention_cost(b * n, m + 1, d) + attention_cost(b, n, d)),
        EncoderKind::Backbone(_) if cfg.level() == EmbeddingLevel::Patch => layers * attention_cost(b * n, m, d),
        EncoderKind::Backbone(_) => layers * attention_cost(b, n, d),
    };
    let decoder = match cfg.task {
        Task::Forecast => {
            let q = ext.pred_len;
            let keys = if cfg.level() == EmbeddingLevel::Patch { m } else { 1 };
            b * n * (q * (1 + keys) * d + 2 * (q + 1 + keys) * d * d + q * 3 * d * d)
        }
        Task::Classify => b * (n * d * d + d * d + d * cfg.classes as u64),
    };
    Ok(CostReport {
        params: Model::expected_params(cfg)?,
        conventional_variable: conventional_variable_cost(b, n, ext.obs_per_variable, d),
        conventional_patch: conventional_patch_cost(b, m, n, ext.obs_per_patch, d),
        query_variable: query_variable_cost(b, n, ext.obs_per_variable, d),
        query_patch: query_patch_cost(b, m, n, ext.obs_per_patch, d),
        stages: StageCosts {
            tokenization,
            aggregation,
            encoder,
            decoder,
        },
    })
}
