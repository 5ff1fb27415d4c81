use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{rng_for, Init};
use crate::tensor::Tensor;

/// Initialization of query tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryInit {
    /// `N(0, 0.02²)`
    RandomNormal,
    /// `U(±sqrt(6 / (D + D)))`
    Xavier,
    /// `U(-0.1, 0.1)`
    Uniform,
    Zero,
}

impl QueryInit {
    pub const ALL: [QueryInit; 4] = [
        QueryInit::Xavier,
        QueryInit::Uniform,
        QueryInit::Zero,
        QueryInit::RandomNormal,
    ];

    /// Query tokens are treated as square `D × D` maps for the Xavier fans.
    pub fn to_init(self, d: usize) -> Init {
        match self {
            QueryInit::RandomNormal => Init::Normal { std: 0.02 },
            QueryInit::Xavier => Init::Xavier { fan_in: d, fan_out: d },
            QueryInit::Uniform => Init::Uniform { low: -0.1, high: 0.1 },
            QueryInit::Zero => Init::Zeros,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QueryInit::RandomNormal => "random_normal",
            QueryInit::Xavier => "xavier",
            QueryInit::Uniform => "uniform",
            QueryInit::Zero => "zero",
        }
    }
}

impl fmt::Display for QueryInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_normal" | "random" => Ok(QueryInit::RandomNormal),
            "xavier" => Ok(QueryInit::Xavier),
            "uniform" => Ok(QueryInit::Uniform),
            "zero" => Ok(QueryInit::Zero),
            other => Err(Error::Config(format!("unknown query init `{other}`"))),
        }
    }
}

/// Stand-alone query tensor of `shape` (last axis is `D`), trainable.
pub fn init_queries(scheme: QueryInit, shape: &[usize], seed: u64) -> Result<Tensor> {
    let d = *shape
        .last()
        .ok_or_else(|| Error::Config("query shape must be nonempty".into()))?;
    let n = shape.iter().product();
    let values = scheme.to_init(d).sample(n, &mut rng_for(seed, "queries"));
    Tensor::param(shape, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scheme_is_exactly_zero() {
        let q = init_queries(QueryInit::Zero, &[3, 4, 8], 1).unwrap();
        assert!(q.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_tensor() {
        for s in QueryInit::ALL {
            let a = init_queries(s, &[4, 8], 9).unwrap().to_vec();
            let b = init_queries(s, &[4, 8], 9).unwrap().to_vec();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn xavier_respects_bound() {
        let d = 16;
        let q = init_queries(QueryInit::Xavier, &[625, d], 3).unwrap().to_vec();
        assert_eq!(q.len(), 10_000);
        let bound = (6.0 / (2 * d) as f64).sqrt();
        assert!(q.iter().all(|v| v.abs() <= bound));
        assert!(q.iter().any(|v| v.abs() > 0.9 * bound));
    }

    #[test]
    fn uniform_and_normal_ranges() {
        let u = init_queries(QueryInit::Uniform, &[1000], 3).unwrap().to_vec();
        assert!(u.iter().all(|v| (-0.1..0.1).contains(v)));
        let n = init_queries(QueryInit::RandomNormal, &[10_000], 3).unwrap().to_vec();
        let std = (n.iter().map(|v| v * v).sum::<f64>() / n.len() as f64).sqrt();
        assert!((std - 0.02).abs() < 0.002, "{std}");
    }

    #[test]
    fn names_round_trip() {
        for s in QueryInit::ALL {
            assert_eq!(s.name().parse::<QueryInit>().unwrap(), s);
        }
        assert!("he".parse::<QueryInit>().is_err());
    }
}
