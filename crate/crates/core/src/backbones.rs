//! Small patch-token and variate-token transformers that sit between an
//! embedding and the forecasting decoder.

use std::fmt;
use std::str::FromStr;

use crate::embed::{EmbeddingLevel, EmbeddingOutput};
use crate::error::{Error, Result};
use crate::nn::AttnBlock;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackboneFamily {
    /// Channel-independent attention over each variable's patch tokens.
    PatchTransformer,
    /// Attention across variables, one token each.
    VariateTransformer,
}

impl BackboneFamily {
    pub fn name(self) -> &'static str {
        match self {
            BackboneFamily::PatchTransformer => "patch_transformer",
            BackboneFamily::VariateTransformer => "variate_transformer",
        }
    }

    pub fn level(self) -> EmbeddingLevel {
        match self {
            BackboneFamily::PatchTransformer => EmbeddingLevel::Patch,
            BackboneFamily::VariateTransformer => EmbeddingLevel::Variable,
        }
    }
}

impl fmt::Display for BackboneFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch_transformer" => Ok(BackboneFamily::PatchTransformer),
            "variate_transformer" => Ok(BackboneFamily::VariateTransformer),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub family: BackboneFamily,
    pub blocks: Vec<AttnBlock>,
}

impl Backbone {
    pub fn new(ps: &mut ParamStore, prefix: &str, family: BackboneFamily, depth: usize, d: usize, heads: usize) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| AttnBlock::new(ps, &format!("{prefix}.{i}"), d, heads))
            .collect::<Result<_>>()?;
        Ok(Backbone { family, blocks })
    }

    pub fn num_params(depth: usize, d: usize) -> usize {
        depth * AttnBlock::num_params(d)
    }

    /// Returns `(C [B × N × D], E [B × M × N × D])`. The patch family averages
    /// each variable's valid patch outputs into `C`; the variate family
    /// returns its tokens as `C` and as a single-patch `E`.
    pub fn forward(&self, input: &EmbeddingOutput) -> Result<(Tensor, Tensor)> {
        if input.level != self.family.level() {
            return Err(Error::Config(format!(
                "{} expects {:?}-level embeddings",
                self.family,
                self.family.level()
            )));
        }
        let (b, m, n, d) = (input.batch(), input.patches(), input.variables(), input.dim());
        match self.family {
            BackboneFamily::PatchTransformer => {
                // patch_valid is [B, M, N]; reorder to [B, N, M]
                let mut valid = vec![0.0; b * n * m];
                let mut counts = vec![0usize; b * n];
                for bi in 0..b {
                    for mi in 0..m {
                        for ni in 0..n {
                            let v = input.patch_valid[(bi * m + mi) * n + ni];
                            valid[(bi * n + ni) * m + mi] = v;
                            counts[bi * n + ni] += (v != 0.0) as usize;
                        }
                    }
                }
                let key_valid: Vec<f64> = valid
                    .chunks(m)
                    .zip(&counts)
                    .flat_map(|(row, &c)| if c == 0 { vec![1.0; m] } else { row.to_vec() })
                    .collect();
                let key_valid = Tensor::new(&[b * n, m], key_valid)?;
                let mut x = input.embeddings.permute(&[0, 2, 1, 3])?.reshape(&[b * n, m, d])?;
                for block in &self.blocks {
                    x = block.forward(&x, Some(&key_valid))?;
                }
                let weights: Vec<f64> = valid
                    .chunks(m)
                    .zip(&counts)
                    .flat_map(|(row, &c)| row.iter().map(move |&v| v / c.max(1) as f64))
                    .collect();
                let weights = Tensor::new(&[b * n, m, 1], weights)?;
                let summary = x.mul(&weights)?.sum_axis(1)?.reshape(&[b, n, d])?;
                let patches = x.reshape(&[b, n, m, d])?.permute(&[0, 2, 1, 3])?;
                Ok((summary, patches))
            }
            BackboneFamily::VariateTransformer => {
                let mut x = input.variable_view()?;
                for block in &self.blocks {
                    x = block.forward(&x, None)?;
                }
                let patches = x.reshape(&[b, 1, n, d])?;
                Ok((x, patches))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn output(level: EmbeddingLevel, shape: [usize; 4], valid: Vec<f64>, seed: u64) -> EmbeddingOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        EmbeddingOutput {
            level,
            embeddings: Tensor::new(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            patch_valid: valid,
        }
    }

    #[test]
    fn depth_zero_passes_through() {
        let mut ps = ParamStore::new(0);
        let bb = Backbone::new(&mut ps, "backbone", BackboneFamily::VariateTransformer, 0, 4, 2).unwrap();
        let x = output(EmbeddingLevel::Variable, [2, 1, 3, 4], vec![1.0; 6], 1);
        let (c, e) = bb.forward(&x).unwrap();
        assert_eq!(c.to_vec(), x.embeddings.to_vec());
        assert_eq!(e.to_vec(), x.embeddings.to_vec());

        let bb = Backbone::new(&mut ps, "patch", BackboneFamily::PatchTransformer, 0, 4, 2).unwrap();
        let x = output(EmbeddingLevel::Patch, [1, 2, 1, 4], vec![1.0, 1.0], 2);
        let (c, e) = bb.forward(&x).unwrap();
        assert_eq!(e.to_vec(), x.embeddings.to_vec());
        let v = x.embeddings.to_vec();
        let mean: Vec<f64> = (0..4).map(|k| (v[k] + v[4 + k]) / 2.0).collect();
        assert_eq!(c.to_vec(), mean);
    }

    #[test]
    fn single_variate_attention_is_a_fixed_map() {
        let mut ps = ParamStore::new(1);
        let bb = Backbone::new(&mut ps, "backbone", BackboneFamily::VariateTransformer, 1, 4, 1).unwrap();
        let x = output(EmbeddingLevel::Variable, [1, 1, 1, 4], vec![1.0], 3);
        let (c, _) = bb.forward(&x).unwrap();
        let (_, w) = bb.blocks[0]
            .attn
            .attend(
                &x.embeddings.reshape(&[1, 1, 4]).unwrap(),
                &x.embeddings.reshape(&[1, 1, 4]).unwrap(),
                None,
            )
            .unwrap();
        assert_eq!(w.to_vec(), vec![1.0]);
        assert_eq!(c.shape(), [1, 1, 4]);
    }

    #[test]
    fn patch_family_is_channel_independent() {
        let mut ps = ParamStore::new(2);
        let bb = Backbone::new(&mut ps, "backbone", BackboneFamily::PatchTransformer, 2, 4, 2).unwrap();
        let x = output(EmbeddingLevel::Patch, [1, 3, 2, 4], vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0], 4);
        let swapped_emb = Tensor::concat(
            &[&x.embeddings.narrow(2, 1, 1).unwrap(), &x.embeddings.narrow(2, 0, 1).unwrap()],
            2,
        )
        .unwrap();
        let swapped = EmbeddingOutput {
            level: EmbeddingLevel::Patch,
            embeddings: swapped_emb,
            patch_valid: vec![1.0, 1.0, 1.0, 0.0, 1.0, 1.0],
        };
        let (c1, _) = bb.forward(&x).unwrap();
        let (c2, _) = bb.forward(&swapped).unwrap();
        let (a, b) = (c1.to_vec(), c2.to_vec());
        for k in 0..4 {
            assert!((a[k] - b[4 + k]).abs() < 1e-12);
            assert!((a[4 + k] - b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn level_mismatch_is_rejected() {
        let mut ps = ParamStore::new(0);
        let bb = Backbone::new(&mut ps, "backbone", BackboneFamily::PatchTransformer, 1, 4, 2).unwrap();
        let x = output(EmbeddingLevel::Variable, [1, 1, 2, 4], vec![1.0; 2], 1);
        assert!(bb.forward(&x).is_err());
    }
}
