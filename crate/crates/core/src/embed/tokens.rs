use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::params::{rng_for, Init, ParamStore};
use crate::tensor::Tensor;

/// Learnable harmonic time embedding: component 0 is `ω0·t + α0`, the rest
/// are `sin(ωk·t + αk)`.
#[derive(Debug, Clone)]
pub struct TimeEmbedder {
    pub omega: Tensor,
    pub alpha: Tensor,
    linear_part: Tensor,
    periodic_part: Tensor,
}

impl TimeEmbedder {
    /// `ω0 = 1, α0 = 0`; `ωk ~ N(0, 1)`, `αk ~ U(0, 2π)` for `k > 0`.
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("time embedding width must be positive".into()));
        }
        let omega_name = format!("{prefix}.omega");
        let alpha_name = format!("{prefix}.alpha");
        let mut rng = rng_for(ps.seed(), &omega_name);
        let mut omega = vec![1.0];
        omega.extend((1..d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        let mut rng = rng_for(ps.seed(), &alpha_name);
        let mut alpha = vec![0.0];
        alpha.extend((1..d).map(|_| rng.random_range(0.0..TAU)));
        let omega = ps.register(&omega_name, &[d], Init::Values(omega))?;
        let alpha = ps.register(&alpha_name, &[d], Init::Values(alpha))?;
        Self::from_parts(omega, alpha)
    }

    pub fn from_parts(omega: Tensor, alpha: Tensor) -> Result<Self> {
        if omega.rank() != 1 || omega.shape() != alpha.shape() {
            return Err(Error::shape("time_embedding", omega.shape(), alpha.shape()));
        }
        let d = omega.numel();
        let mut sel = vec![0.0; d];
        sel[0] = 1.0;
        let anti = sel.iter().map(|s| 1.0 - s).collect();
        Ok(TimeEmbedder {
            omega,
            alpha,
            linear_part: Tensor::new(&[d], sel)?,
            periodic_part: Tensor::new(&[d], anti)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.numel()
    }

    /// `[..] -> [.., D]`
    pub fn forward(&self, t: &Tensor) -> Result<Tensor> {
        let mut shape = t.shape().to_vec();
        shape.push(1);
        let arg = t.reshape(&shape)?.mul(&self.omega)?.add(&self.alpha)?;
        arg.mul(&self.linear_part)?.add(&arg.sin()?.mul(&self.periodic_part)?)
    }

    pub fn embed_time(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.forward(&Tensor::new(&[1], vec![t])?)?.to_vec())
    }
}

/// Linear value encoder `ℝ -> ℝ^D`.
#[derive(Debug, Clone)]
pub struct ValueEmbedder {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ValueEmbedder {
    pub fn new(ps: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(ValueEmbedder {
            weight: ps.register(&format!("{prefix}.weight"), &[1, d], Init::Xavier { fan_in: 1, fan_out: d })?,
            bias: ps.register(&format!("{prefix}.bias"), &[d], Init::Zeros)?,
        })
    }

    /// `[..] -> [.., D]`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut shape = x.shape().to_vec();
        shape.push(1);
        x.reshape(&shape)?.mul(&self.weight)?.add(&self.bias)
    }
}

/// Observation tokens `z = f_val(x) + φ(t)`.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub time: TimeEmbedder,
    pub value: ValueEmbedder,
}

impl Tokenizer {
    /// `values`, `times`: `[..]` -> tokens `[.., D]`. Masks are not consulted;
    /// padded slots get tokens too.
    pub fn tokenize(&self, values: &Tensor, times: &Tensor) -> Result<Tensor> {
        if values.shape() != times.shape() {
            return Err(Error::shape("tokenize", values.shape(), times.shape()));
        }
        self.value.forward(values)?.add(&self.time.forward(times)?)
    }
}
