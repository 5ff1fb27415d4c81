//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::tensor::Tensor;

/// Below this magnitude a coordinate is judged on absolute error alone.
pub const ABS_FALLBACK: f64 = 1e-7;
pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradReport {
    /// Largest relative error over coordinates whose absolute error exceeds
    /// [`ABS_FALLBACK`].
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coordinates: usize,
}

impl GradReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        self.max_abs_err = self.max_abs_err.max(abs);
        if abs > ABS_FALLBACK {
            let rel = abs / analytic.abs().max(numeric.abs());
            self.max_rel_err = self.max_rel_err.max(rel);
        }
        self.coordinates += 1;
    }

    pub fn merge(&mut self, other: &GradReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.coordinates += other.coordinates;
    }
}

/// Compares the gradient of the scalar function `f` at `x` against
/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let base = x.to_vec();
    let leaf = Tensor::param(x.shape(), base.clone())?;
    f(&leaf)?.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; base.len()]);

    let mut report = GradReport::default();
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let up = f(&Tensor::new(x.shape(), probe.clone())?)?.item();
        probe[i] = base[i] - h;
        let down = f(&Tensor::new(x.shape(), probe.clone())?)?.item();
        probe[i] = base[i];
        report.record(analytic[i], (up - down) / (2.0 * h));
    }
    Ok(report)
}

/// Same check, perturbing parameter leaves in place. `loss` rebuilds the
/// graph on every call. Returns one report per named tensor.
pub fn finite_diff_check_params<F>(loss: F, params: &[(String, Tensor)], h: f64) -> Result<Vec<(String, GradReport)>>
where
    F: Fn() -> Result<Tensor>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let mut out = Vec::with_capacity(params.len());
    for (name, p) in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let base = p.to_vec();
        let mut probe = base.clone();
        let mut report = GradReport::default();
        for i in 0..base.len() {
            probe[i] = base[i] + h;
            p.set_data(&probe)?;
            let up = loss()?.item();
            probe[i] = base[i] - h;
            p.set_data(&probe)?;
            let down = loss()?.item();
            probe[i] = base[i];
            report.record(analytic[i], (up - down) / (2.0 * h));
        }
        p.set_data(&base)?;
        p.zero_grad();
        out.push((name.clone(), report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_matches_tightly() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let r = finite_diff_check(|x| x.mul(x)?.sum(), &x, 1e-5).unwrap();
        assert!(r.passes(1e-8), "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let x = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let r = finite_diff_check(|x| x.scale(0.0)?.sum(), &x, 1e-5).unwrap();
        assert_eq!(r.max_abs_err, 0.0);
        assert_eq!(r.max_rel_err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::new(&[3], vec![0.4, 1.1, -0.7]).unwrap();
        let _fault = crate::tensor::inject_gradient_fault();
        let r = finite_diff_check(|x| x.sin()?.sum(), &x, 1e-5).unwrap();
        assert!(!r.passes(1e-4));
    }
}
