//! Layers shared by the embeddings, encoders and decoders.

use crate::error::{Error, Result};
use crate::params::{Init, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, prefix: &str, inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Linear {
            weight: ps.register(
                &format!("{prefix}.weight"),
                &[inputs, outputs],
                Init::Xavier {
                    fan_in: inputs,
                    fan_out: outputs,
                },
            )?,
            bias: ps.register(&format!("{prefix}.bias"), &[outputs], Init::Zeros)?,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `[.., in] -> [.., out]`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }

    pub fn num_params(inputs: usize, outputs: usize) -> usize {
        inputs * outputs + outputs
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: ps.register(&format!("{prefix}.gain"), &[d], Init::Ones)?,
            bias: ps.register(&format!("{prefix}.bias"), &[d], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias)
    }
}

/// Position-wise `D -> 4D -> D` with ReLU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub const EXPANSION: usize = 4;

    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(ps, &format!("{prefix}.up"), d, Self::EXPANSION * d)?,
            down: Linear::new(ps, &format!("{prefix}.down"), Self::EXPANSION * d, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.relu()?)
    }

    pub fn num_params(d: usize) -> usize {
        Linear::num_params(d, Self::EXPANSION * d) + Linear::num_params(Self::EXPANSION * d, d)
    }
}

/// Three linear layers with ReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp3 {
    pub layers: [Linear; 3],
}

impl Mlp3 {
    pub fn new(ps: &mut ParamStore, prefix: &str, inputs: usize, hidden: usize, outputs: usize) -> Result<Self> {
        Ok(Mlp3 {
            layers: [
                Linear::new(ps, &format!("{prefix}.0"), inputs, hidden)?,
                Linear::new(ps, &format!("{prefix}.1"), hidden, hidden)?,
                Linear::new(ps, &format!("{prefix}.2"), hidden, outputs)?,
            ],
        })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.layers[0].forward(x)?.relu()?;
        let h = self.layers[1].forward(&h)?.relu()?;
        self.layers[2].forward(&h)
    }

    pub fn num_params(inputs: usize, hidden: usize, outputs: usize) -> usize {
        Linear::num_params(inputs, hidden) + Linear::num_params(hidden, hidden) + Linear::num_params(hidden, outputs)
    }
}

/// Multi-head scaled dot-product attention over `[S × L × D]` sequences.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("model width {d} is not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(ps, &format!("{prefix}.query"), d, d)?,
            key: Linear::new(ps, &format!("{prefix}.key"), d, d)?,
            value: Linear::new(ps, &format!("{prefix}.value"), d, d)?,
            output: Linear::new(ps, &format!("{prefix}.output"), d, d)?,
            heads,
        })
    }

    pub fn num_params(d: usize) -> usize {
        4 * Linear::num_params(d, d)
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        let (b, l, d) = (s[0], s[1], s[2]);
        x.reshape(&[b, l, self.heads, d / self.heads])?.permute(&[0, 2, 1, 3])
    }

    /// Returns the attention output `[S × Lq × D]` and weights `[S × H × Lq × Lk]`.
    /// `key_valid` is `[S × Lk]`; `None` means every key is valid.
    pub fn attend(&self, queries: &Tensor, context: &Tensor, key_valid: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        if queries.rank() != 3 || context.rank() != 3 || queries.shape()[0] != context.shape()[0] {
            return Err(Error::shape("attention", queries.shape(), context.shape()));
        }
        let (s, lq, d) = (queries.shape()[0], queries.shape()[1], queries.shape()[2]);
        let lk = context.shape()[1];
        let q = self.split_heads(&self.query.forward(queries)?)?;
        let k = self.split_heads(&self.key.forward(context)?)?;
        let v = self.split_heads(&self.value.forward(context)?)?;
        let dh = d / self.heads;
        let scores = q.matmul(&k.transpose_last()?)?.scale(1.0 / (dh as f64).sqrt())?;
        let valid = match key_valid {
            Some(m) => m.reshape(&[s, 1, 1, lk])?,
            None => Tensor::new(&[lk], vec![1.0; lk])?,
        };
        let weights = scores.masked_softmax(&valid)?;
        let mixed = weights.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[s, lq, d])?;
        Ok((self.output.forward(&mixed)?, weights))
    }
}

/// Pre-norm transformer encoder block:
/// `h = x + MHA(LN(x))`, `y = h + FFN(LN(h))`.
#[derive(Debug, Clone)]
pub struct AttnBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

impl AttnBlock {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(AttnBlock {
            norm1: LayerNorm::new(ps, &format!("{prefix}.norm1"), d)?,
            attn: MultiHeadAttention::new(ps, &format!("{prefix}.attn"), d, heads)?,
            norm2: LayerNorm::new(ps, &format!("{prefix}.norm2"), d)?,
            ff: FeedForward::new(ps, &format!("{prefix}.ff"), d)?,
        })
    }

    pub fn num_params(d: usize) -> usize {
        4 * d + MultiHeadAttention::num_params(d) + FeedForward::num_params(d)
    }

    /// Full sequence update, `[S × L × D] -> [S × L × D]`. Every position
    /// attends under the same key mask.
    pub fn forward(&self, x: &Tensor, key_valid: Option<&Tensor>) -> Result<Tensor> {
        let xn = self.norm1.forward(x)?;
        let (a, _) = self.attn.attend(&xn, &xn, key_valid)?;
        let h = x.add(&a)?;
        h.add(&self.ff.forward(&self.norm2.forward(&h)?)?)
    }

    /// Output at position 0 only, `[S × L × D] -> [S × D]`. Equal to
    /// `forward(x)[:, 0]` but skips the other query rows.
    pub fn forward_first(&self, x: &Tensor, key_valid: Option<&Tensor>) -> Result<Tensor> {
        let (s, d) = (x.shape()[0], x.shape()[2]);
        let xn = self.norm1.forward(x)?;
        let (a, _) = self.attn.attend(&xn.narrow(1, 0, 1)?, &xn, key_valid)?;
        let h = x.narrow(1, 0, 1)?.add(&a)?;
        h.add(&self.ff.forward(&self.norm2.forward(&h)?)?)?.reshape(&[s, d])
    }
}

/// Pre-norm cross-attention block with a residual on the query path:
/// `h = u + MHA(LN(u), LN(ctx))`, `y = h + FFN(LN(h))`.
#[derive(Debug, Clone)]
pub struct CrossAttnBlock {
    pub norm_query: LayerNorm,
    pub norm_context: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

impl CrossAttnBlock {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(CrossAttnBlock {
            norm_query: LayerNorm::new(ps, &format!("{prefix}.norm_query"), d)?,
            norm_context: LayerNorm::new(ps, &format!("{prefix}.norm_context"), d)?,
            attn: MultiHeadAttention::new(ps, &format!("{prefix}.attn"), d, heads)?,
            norm2: LayerNorm::new(ps, &format!("{prefix}.norm2"), d)?,
            ff: FeedForward::new(ps, &format!("{prefix}.ff"), d)?,
        })
    }

    pub fn num_params(d: usize) -> usize {
        6 * d + MultiHeadAttention::num_params(d) + FeedForward::num_params(d)
    }

    /// The attention term alone (before residual and feed-forward) plus weights.
    pub fn attention(&self, queries: &Tensor, context: &Tensor) -> Result<(Tensor, Tensor)> {
        let qn = self.norm_query.forward(queries)?;
        let cn = self.norm_context.forward(context)?;
        self.attn.attend(&qn, &cn, None)
    }

    pub fn forward(&self, queries: &Tensor, context: &Tensor) -> Result<Tensor> {
        let (a, _) = self.attention(queries, context)?;
        let h = queries.add(&a)?;
        h.add(&self.ff.forward(&self.norm2.forward(&h)?)?)
    }
}
