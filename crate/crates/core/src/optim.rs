//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter, then clears all gradients.
    pub fn step(&mut self, params: &ParamStore) -> Result<()> {
        let mut grads = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            let g = t.grad().ok_or_else(|| Error::MissingGrad(name.to_string()))?;
            grads.push(g);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((name, p), g) in params.iter().zip(grads) {
            let m = self.first.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            let (lr, b1, b2, eps) = (self.learning_rate, self.beta1, self.beta2, self.epsilon);
            p.update_data(|data| {
                for i in 0..data.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    data[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
        }
        params.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    fn single(value: f64) -> ParamStore {
        let mut ps = ParamStore::new(0);
        ps.register("x", &[1], Init::Values(vec![value])).unwrap();
        ps
    }

    fn set_grad(ps: &ParamStore, g: f64) {
        // loss = g * x has gradient g
        let x = ps.get("x").unwrap();
        x.scale(g).unwrap().sum().unwrap().backward().unwrap();
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let ps = single(0.0);
        let mut adam = Adam::new(1e-3);
        set_grad(&ps, 1.0);
        adam.step(&ps).unwrap();
        // hand evaluation: m̂ = 1, v̂ = 1, update = -lr · 1 / (1 + 1e-8)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((ps.get("x").unwrap().item() - expected).abs() < 1e-15);
        assert!(ps.get("x").unwrap().grad().is_none());
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let ps = single(0.7);
        let mut adam = Adam::new(1e-3);
        set_grad(&ps, 0.0);
        adam.step(&ps).unwrap();
        assert_eq!(ps.get("x").unwrap().item(), 0.7);
    }

    #[test]
    fn two_steps_descend_monotonically() {
        let ps = single(0.0);
        let mut adam = Adam::new(1e-3);
        set_grad(&ps, 1.0);
        adam.step(&ps).unwrap();
        let after_one = ps.get("x").unwrap().item();
        set_grad(&ps, 1.0);
        adam.step(&ps).unwrap();
        let after_two = ps.get("x").unwrap().item();
        // constant gradient keeps m̂ = v̂ = 1, so each step is -lr/(1+eps)
        assert!(after_one < 0.0 && after_two < after_one);
        assert!((after_two - 2.0 * after_one).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let ps = single(1.0);
        let mut adam = Adam::new(1e-3);
        assert!(matches!(adam.step(&ps), Err(Error::MissingGrad(_))));
    }
}
