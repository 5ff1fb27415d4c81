use super::init::QueryInit;
use super::tokens::Tokenizer;
use super::{EmbeddingLevel, EmbeddingOutput, ObservationInput};
use crate::error::{Error, Result};
use crate::nn::AttnBlock;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// One learnable query per variable (`[N × D]`) or per patch–variable pair
/// (`[M × N × D]`).
#[derive(Debug, Clone)]
pub struct QueryTokenBank {
    pub level: EmbeddingLevel,
    pub tokens: Tensor,
    pub init: QueryInit,
}

impl QueryTokenBank {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        level: EmbeddingLevel,
        patches: usize,
        variables: usize,
        d: usize,
        init: QueryInit,
    ) -> Result<Self> {
        let shape = match level {
            EmbeddingLevel::Variable => vec![variables, d],
            EmbeddingLevel::Patch => vec![patches, variables, d],
        };
        Ok(QueryTokenBank {
            level,
            tokens: ps.register(name, &shape, init.to_init(d))?,
            init,
        })
    }

    pub fn count(&self) -> usize {
        self.tokens.shape()[..self.tokens.rank() - 1].iter().product()
    }

    pub fn dim(&self) -> usize {
        *self.tokens.shape().last().expect("rank >= 2")
    }
}

/// Query aggregation over `S` independent sets.
///
/// `tokens` is `[S × L × D]`, `masks` holds `S·L` flags and `queries` is
/// `[S × D]`. Each set is run through `block` as `[q ; Z]` with key mask
/// `[1 | m]`; the updated query position is returned as `[S × D]`.
pub fn aggregate(tokens: &Tensor, masks: &[f64], queries: &Tensor, block: &AttnBlock) -> Result<Tensor> {
    if tokens.rank() != 3
        || queries.rank() != 2
        || tokens.shape()[0] != queries.shape()[0]
        || tokens.shape()[2] != queries.shape()[1]
    {
        return Err(Error::shape("aggregate", tokens.shape(), queries.shape()));
    }
    let (s, l, d) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
    if masks.len() != s * l {
        return Err(Error::invalid(
            "aggregate",
            format!("expected {} mask entries, got {}", s * l, masks.len()),
        ));
    }
    let seq = Tensor::concat(&[&queries.reshape(&[s, 1, d])?, tokens], 1)?;
    let mut valid = Vec::with_capacity(s * (l + 1));
    for row in masks.chunks(l.max(1)).take(s) {
        valid.push(1.0);
        valid.extend(row.iter().take(l).map(|&m| if m != 0.0 { 1.0 } else { 0.0 }));
    }
    if l == 0 {
        valid.resize(s, 1.0);
    }
    let valid = Tensor::new(&[s, l + 1], valid)?;
    block.forward_first(&seq, Some(&valid))
}

/// Single variable: `Z_n [L × D]`, `q_n [D]` -> `e_n [D]`.
pub fn aggregate_variable(tokens: &Tensor, masks: &[f64], query: &Tensor, block: &AttnBlock) -> Result<Tensor> {
    if tokens.rank() != 2 || query.rank() != 1 {
        return Err(Error::shape("aggregate_variable", tokens.shape(), query.shape()));
    }
    let (l, d) = (tokens.shape()[0], tokens.shape()[1]);
    let e = aggregate(&tokens.reshape(&[1, l, d])?, masks, &query.reshape(&[1, d])?, block)?;
    e.reshape(&[d])
}

/// One instance at patch level: `Z [M × N × L × D]`, `q [M × N × D]` ->
/// `E [M × N × D]`.
pub fn aggregate_patch(tokens: &Tensor, masks: &[f64], queries: &Tensor, block: &AttnBlock) -> Result<Tensor> {
    if tokens.rank() != 4 || queries.rank() != 3 || tokens.shape()[..2] != queries.shape()[..2] {
        return Err(Error::shape("aggregate_patch", tokens.shape(), queries.shape()));
    }
    let [m, n, l, d] = [tokens.shape()[0], tokens.shape()[1], tokens.shape()[2], tokens.shape()[3]];
    let e = aggregate(&tokens.reshape(&[m * n, l, d])?, masks, &queries.reshape(&[m * n, d])?, block)?;
    e.reshape(&[m, n, d])
}

#[derive(Debug, Clone)]
pub struct QuiteEmbedding {
    pub tokenizer: Tokenizer,
    pub queries: QueryTokenBank,
    pub block: AttnBlock,
}

impl QuiteEmbedding {
    pub fn level(&self) -> EmbeddingLevel {
        self.queries.level
    }

    pub fn forward(&self, input: &ObservationInput) -> Result<EmbeddingOutput> {
        let [b, m, n, l] = input.shape;
        let d = self.queries.dim();
        let cells = m * n;
        if self.queries.count() != cells {
            return Err(Error::shape("quite_embedding", self.queries.tokens.shape(), &input.shape));
        }
        let z = self.tokenizer.tokenize(&input.values, &input.times)?;
        let z = z.reshape(&[b * cells, l, d])?;
        let q = self
            .queries
            .tokens
            .reshape(&[1, cells, d])?
            .broadcast_to(&[b, cells, d])?
            .reshape(&[b * cells, d])?;
        let e = aggregate(&z, &input.mask_values, &q, &self.block)?;
        Ok(EmbeddingOutput {
            level: self.level(),
            embeddings: e.reshape(&[b, m, n, d])?,
            patch_valid: input.cell_valid(),
        })
    }
}
