use super::tokens::Tokenizer;
use super::{EmbeddingLevel, EmbeddingOutput, ObservationInput};
use crate::error::Result;
use crate::nn::{AttnBlock, Linear};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Add,
    Concat,
    MeanPool,
}

/// Query-free embeddings: per-observation tokens reduced by a masked mean.
#[derive(Debug, Clone)]
pub struct BaselineEmbedding {
    pub kind: BaselineKind,
    pub level: EmbeddingLevel,
    pub tokenizer: Option<Tokenizer>,
    pub concat: Option<Linear>,
    pub block: Option<AttnBlock>,
}

impl BaselineEmbedding {
    /// `z = f_val(x) + φ(t)`, averaged.
    pub fn add(tokenizer: Tokenizer, level: EmbeddingLevel) -> Self {
        BaselineEmbedding {
            kind: BaselineKind::Add,
            level,
            tokenizer: Some(tokenizer),
            concat: None,
            block: None,
        }
    }

    /// Linear map of `(x, t)`, averaged.
    pub fn concat(ps: &mut ParamStore, prefix: &str, level: EmbeddingLevel, d: usize) -> Result<Self> {
        Ok(BaselineEmbedding {
            kind: BaselineKind::Concat,
            level,
            tokenizer: None,
            concat: Some(Linear::new(ps, prefix, 2, d)?),
            block: None,
        })
    }

    /// Self-attention over the observation tokens, then averaged.
    pub fn mean_pool(tokenizer: Tokenizer, block: AttnBlock, level: EmbeddingLevel) -> Self {
        BaselineEmbedding {
            kind: BaselineKind::MeanPool,
            level,
            tokenizer: Some(tokenizer),
            concat: None,
            block: Some(block),
        }
    }

    pub fn forward(&self, input: &ObservationInput) -> Result<EmbeddingOutput> {
        let [b, m, n, l] = input.shape;
        let tokens = match self.kind {
            BaselineKind::Add | BaselineKind::MeanPool => self
                .tokenizer
                .as_ref()
                .expect("tokenizer")
                .tokenize(&input.values, &input.times)?,
            BaselineKind::Concat => {
                let x = input.values.reshape(&[b, m, n, l, 1])?;
                let t = input.times.reshape(&[b, m, n, l, 1])?;
                self.concat
                    .as_ref()
                    .expect("projection")
                    .forward(&Tensor::concat(&[&x, &t], -1)?)?
            }
        };
        let d = tokens.shape()[4];
        let tokens = match &self.block {
            Some(block) if self.kind == BaselineKind::MeanPool => {
                // empty sets attend over their padding; the mean below drops it
                let mut valid = input.mask_values.clone();
                for (row, &c) in valid.chunks_mut(l).zip(&input.cell_counts()) {
                    if c == 0 {
                        row.fill(1.0);
                    }
                }
                let cells = b * m * n;
                let valid = Tensor::new(&[cells, l], valid)?;
                block
                    .forward(&tokens.reshape(&[cells, l, d])?, Some(&valid))?
                    .reshape(&[b, m, n, l, d])?
            }
            _ => tokens,
        };
        Ok(EmbeddingOutput {
            level: self.level,
            embeddings: masked_mean(&tokens, input)?,
            patch_valid: input.cell_valid(),
        })
    }
}

/// `[B × M × N × L × D] -> [B × M × N × D]`, averaging over valid slots.
/// Cells without observations come out as zero.
pub fn masked_mean(tokens: &Tensor, input: &ObservationInput) -> Result<Tensor> {
    let [b, m, n, l] = input.shape;
    let mask = input.masks.reshape(&[b, m, n, l, 1])?;
    let inv: Vec<f64> = input.cell_counts().iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let inv = Tensor::new(&[b, m, n, 1], inv)?;
    tokens.mul(&mask)?.sum_axis(3)?.mul(&inv)
}
