use super::instance::ImtsInstance;
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

/// Per-variable z-score statistics, fitted on training data only.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &[ImtsInstance]) -> Result<Normalizer> {
        let n = train.first().map_or(0, ImtsInstance::num_variables);
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for inst in train {
            if inst.num_variables() != n {
                return Err(Error::InconsistentVariables {
                    expected: n,
                    found: inst.num_variables(),
                });
            }
            for (v, obs) in inst.variables.iter().enumerate() {
                sums[v] += obs.iter().map(|o| o.value).sum::<f64>();
                counts[v] += obs.len();
            }
        }
        let missing: Vec<usize> = (0..n).filter(|&v| counts[v] == 0).collect();
        if !missing.is_empty() {
            return Err(Error::MissingVariables(missing));
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        let mut sq = vec![0.0; n];
        for inst in train {
            for (v, obs) in inst.variables.iter().enumerate() {
                sq[v] += obs.iter().map(|o| (o.value - means[v]).powi(2)).sum::<f64>();
            }
        }
        let stds = sq
            .iter()
            .zip(&counts)
            .map(|(s, &c)| (s / c as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Normalizer { means, stds })
    }

    pub fn transform_value(&self, variable: usize, x: f64) -> f64 {
        (x - self.means[variable]) / self.stds[variable]
    }

    pub fn untransform_value(&self, variable: usize, z: f64) -> f64 {
        z * self.stds[variable] + self.means[variable]
    }

    pub fn transform(&self, inst: &ImtsInstance) -> ImtsInstance {
        let mut out = inst.clone();
        for (v, obs) in out.variables.iter_mut().enumerate() {
            for o in obs {
                o.value = self.transform_value(v, o.value);
            }
        }
        out
    }

    pub fn untransform(&self, inst: &ImtsInstance) -> ImtsInstance {
        let mut out = inst.clone();
        for (v, obs) in out.variables.iter_mut().enumerate() {
            for o in obs {
                o.value = self.untransform_value(v, o.value);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_var(values: &[f64]) -> ImtsInstance {
        ImtsInstance::from_rows("a", 1, values.iter().enumerate().map(|(i, &v)| (0, i as f64, v))).unwrap()
    }

    #[test]
    fn standardizes_with_population_std() {
        let inst = one_var(&[1.0, 3.0]);
        let norm = Normalizer::fit(std::slice::from_ref(&inst)).unwrap();
        assert_eq!((norm.means[0], norm.stds[0]), (2.0, 1.0));
        let z: Vec<f64> = norm.transform(&inst).variables[0].iter().map(|o| o.value).collect();
        assert_eq!(z, vec![-1.0, 1.0]);
    }

    #[test]
    fn constant_variable_maps_to_zero() {
        let inst = one_var(&[5.0, 5.0]);
        let norm = Normalizer::fit(std::slice::from_ref(&inst)).unwrap();
        assert_eq!(norm.stds[0], STD_FLOOR);
        let z: Vec<f64> = norm.transform(&inst).variables[0].iter().map(|o| o.value).collect();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn untransform_inverts_transform() {
        let inst = one_var(&[0.3, -7.25, 12.5, 1e3]);
        let norm = Normalizer::fit(std::slice::from_ref(&inst)).unwrap();
        let back = norm.untransform(&norm.transform(&inst));
        for (a, b) in inst.variables[0].iter().zip(&back.variables[0]) {
            assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0));
        }
    }

    #[test]
    fn absent_variable_is_reported() {
        let inst = ImtsInstance::from_rows("a", 3, [(1, 0.0, 1.0)]).unwrap();
        match Normalizer::fit(&[inst]) {
            Err(Error::MissingVariables(v)) => assert_eq!(v, vec![0, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
