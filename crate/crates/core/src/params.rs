//! Named parameter registry.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a parameter is filled at registration.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal {
        std: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Glorot uniform, `±sqrt(6 / (fan_in + fan_out))`.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Values(Vec<f64>),
}

impl Init {
    pub fn xavier_for(shape: &[usize]) -> Init {
        let fan_in = *shape.last().unwrap_or(&1);
        let fan_out = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
        Init::Xavier { fan_in, fan_out }
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal { std } => {
                let dist = Normal::new(0.0, *std).expect("finite std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Uniform { low, high } => (0..n).map(|_| rng.random_range(*low..*high)).collect(),
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Values(v) => v.clone(),
        }
    }
}

/// A stream id derived from a parameter name, so each parameter's initial
/// values depend only on `(seed, name)` and not on registration order.
fn name_stream(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(name_stream(name));
    rng
}

/// `(name, shape)` pairs in name order.
pub type Manifest = Vec<(String, Vec<usize>)>;

/// Parameters keyed by dot-separated path, iterated in sorted order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let n: usize = shape.iter().product();
        let values = init.sample(n, &mut rng_for(self.seed, name));
        let t = Tensor::param(shape, values)?;
        self.params.insert(name.to_string(), t.clone());
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// `(name, shape)` pairs in iteration order.
    pub fn manifest(&self) -> Manifest {
        self.params.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    }

    pub fn zero_grad(&self) {
        self.params.values().for_each(Tensor::zero_grad);
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.values().map(Tensor::to_vec).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::Checkpoint("snapshot does not match parameter count".into()));
        }
        for (t, v) in self.params.values().zip(snapshot) {
            t.set_data(v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_is_sorted_and_reproducible() {
        let mut ps = ParamStore::new(3);
        ps.register("b.w", &[2], Init::Zeros).unwrap();
        ps.register("a.w", &[2, 2], Init::Ones).unwrap();
        ps.register("c", &[1], Init::Normal { std: 1.0 }).unwrap();
        let first = ps.names();
        assert_eq!(first, vec!["a.w", "b.w", "c"]);
        assert_eq!(ps.names(), first);
        assert_eq!(ps.num_scalars(), 7);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut ps = ParamStore::new(0);
        ps.register("x", &[1], Init::Zeros).unwrap();
        assert!(ps.register("x", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn values_depend_on_seed_and_name_only() {
        let mut a = ParamStore::new(7);
        a.register("other", &[5], Init::Normal { std: 1.0 }).unwrap();
        let ta = a.register("w", &[4], Init::Normal { std: 1.0 }).unwrap();
        let mut b = ParamStore::new(7);
        let tb = b.register("w", &[4], Init::Normal { std: 1.0 }).unwrap();
        assert_eq!(ta.to_vec(), tb.to_vec());
        let mut c = ParamStore::new(8);
        let tc = c.register("w", &[4], Init::Normal { std: 1.0 }).unwrap();
        assert_ne!(ta.to_vec(), tc.to_vec());
    }
}
