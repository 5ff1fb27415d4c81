//! Seeded synthetic IMTS: Poisson observation times, coupled sinusoids,
//! Gaussian noise, and uniform random removal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::instance::{ImtsInstance, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_instances: usize,
    pub num_variables: usize,
    /// Expected observations per variable per unit time, before removal.
    pub base_rate: f64,
    pub missing_ratio: f64,
    /// Cycles per unit time, one per variable.
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Weight of variable `(n + 1) mod N`'s sinusoid mixed into variable `n`.
    pub coupling: f64,
    pub noise_std: f64,
    /// Per-instance phase offset drawn from `U(-jitter, jitter)`, shared by all variables.
    pub phase_jitter: f64,
    /// Per-instance additive level drawn from `U(-jitter, jitter)`.
    pub level_jitter: f64,
    /// Attach label 1 when the instance's mean observed value is positive, else 0.
    pub label_by_mean_sign: bool,
    pub window: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_instances: 100,
            num_variables: 4,
            base_rate: 1.0,
            missing_ratio: 0.5,
            frequencies: vec![1.0 / 48.0, 1.0 / 32.0, 1.0 / 24.0, 1.0 / 40.0],
            phases: vec![0.0, 1.0, 2.0, 3.0],
            amplitudes: vec![1.0, 1.5, 0.8, 1.2],
            coupling: 0.3,
            noise_std: 0.1,
            phase_jitter: std::f64::consts::PI,
            level_jitter: 0.0,
            label_by_mean_sign: false,
            window: 48.0,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.num_variables;
        let fail = |m: String| Err(Error::Config(format!("synthetic: {m}")));
        if n == 0 {
            return fail("num_variables must be positive".into());
        }
        for (name, v) in [
            ("frequencies", &self.frequencies),
            ("phases", &self.phases),
            ("amplitudes", &self.amplitudes),
        ] {
            if v.len() != n {
                return fail(format!("{name} has {} entries for {n} variables", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return fail(format!("{name} must be finite"));
            }
        }
        if !(0.0..1.0).contains(&self.missing_ratio) {
            return fail("missing_ratio must lie in [0, 1)".into());
        }
        let scalars = [
            self.base_rate,
            self.coupling,
            self.noise_std,
            self.phase_jitter,
            self.level_jitter,
            self.window,
        ];
        if scalars.iter().any(|x| !x.is_finite()) || self.base_rate <= 0.0 || self.window <= 0.0 {
            return fail("rates, window and noise must be finite with positive rate and window".into());
        }
        if self.noise_std < 0.0 || self.phase_jitter < 0.0 || self.level_jitter < 0.0 {
            return fail("noise_std and jitters must be nonnegative".into());
        }
        Ok(())
    }

    /// Resizes the per-variable signal lists to `num_variables`, cycling the
    /// existing entries.
    pub fn fit_signal_lists(&mut self) {
        let n = self.num_variables;
        for v in [&mut self.frequencies, &mut self.phases, &mut self.amplitudes] {
            if v.is_empty() {
                v.push(1.0);
            }
            *v = (0..n).map(|i| v[i % v.len()]).collect();
        }
    }

    fn sinusoid(&self, n: usize, t: f64, offset: f64) -> f64 {
        self.amplitudes[n] * (2.0 * std::f64::consts::PI * self.frequencies[n] * t + self.phases[n] + offset).sin()
    }

    /// Noise-free signal of variable `n` at time `t` for a given instance offset.
    pub fn signal(&self, n: usize, t: f64, phase_offset: f64, level: f64) -> f64 {
        let mut v = self.sinusoid(n, t, phase_offset) + level;
        if self.coupling != 0.0 {
            v += self.coupling * self.sinusoid((n + 1) % self.num_variables, t, phase_offset);
        }
        v
    }
}

/// Independent random stream for one instance, so instances can be
/// generated in any order.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<ImtsInstance>> {
    cfg.validate()?;
    (0..cfg.num_instances).map(|i| generate_instance(cfg, i)).collect()
}

pub fn generate_instance(cfg: &SyntheticConfig, index: usize) -> Result<ImtsInstance> {
    let mut rng = instance_rng(cfg.seed, index as u64);
    let gaps = Exp::new(cfg.base_rate).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let phase_offset = if cfg.phase_jitter > 0.0 {
        rng.random_range(-cfg.phase_jitter..cfg.phase_jitter)
    } else {
        0.0
    };
    let level = if cfg.level_jitter > 0.0 {
        rng.random_range(-cfg.level_jitter..cfg.level_jitter)
    } else {
        0.0
    };
    let mut inst = ImtsInstance::new(format!("syn-{index:05}"), cfg.num_variables);
    for n in 0..cfg.num_variables {
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut rng);
            if t >= cfg.window {
                break;
            }
            let eps = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let keep = rng.random::<f64>() >= cfg.missing_ratio;
            if keep {
                inst.variables[n].push(Observation {
                    timestamp: t,
                    value: cfg.signal(n, t, phase_offset, level) + eps,
                });
            }
        }
    }
    if cfg.label_by_mean_sign {
        let (sum, count) = inst
            .variables
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, c), o| (s + o.value, c + 1));
        inst.label = Some(usize::from(count > 0 && sum / count as f64 > 0.0));
    }
    inst.sort_and_validate()?;
    Ok(inst)
}
