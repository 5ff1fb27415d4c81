use super::{EmbeddingLevel, EmbeddingOutput, ObservationInput};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Observations placed on a regular grid of `bins` slots per cell (averaged
/// where several share a slot, zero where none), then one linear projection
/// of the whole grid row to `D`.
#[derive(Debug, Clone)]
pub struct ConventionalEmbedding {
    pub level: EmbeddingLevel,
    pub bins: usize,
    pub projection: Linear,
}

impl ConventionalEmbedding {
    pub fn new(ps: &mut ParamStore, prefix: &str, level: EmbeddingLevel, bins: usize, d: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("conventional embedding needs at least one bin".into()));
        }
        Ok(ConventionalEmbedding {
            level,
            bins,
            projection: Linear::new(ps, prefix, bins, d)?,
        })
    }

    pub fn forward(&self, input: &ObservationInput) -> Result<EmbeddingOutput> {
        let [b, m, n, _] = input.shape;
        let grid = Tensor::new(&[b, m, n, self.bins], bin_values(input, self.bins))?;
        Ok(EmbeddingOutput {
            level: self.level,
            embeddings: self.projection.forward(&grid)?,
            patch_valid: input.cell_valid(),
        })
    }
}

/// `[B·M·N·bins]` grid of slot-averaged values.
pub fn bin_values(input: &ObservationInput, bins: usize) -> Vec<f64> {
    let l = input.slots();
    let values = input.values.data();
    let mut sums = vec![0.0; input.cells() * bins];
    let mut counts = vec![0usize; input.cells() * bins];
    for (i, &mask) in input.mask_values.iter().enumerate() {
        if mask == 0.0 {
            continue;
        }
        let slot = ((input.offsets[i] * bins as f64) as usize).min(bins - 1);
        let k = (i / l) * bins + slot;
        sums[k] += values[i];
        counts[k] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}
