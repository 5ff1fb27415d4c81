use super::instance::ImtsInstance;
use crate::error::{Error, Result};

/// Fixed-width time intervals over a window. Patch `m` covers
/// `[start + m·stride, start + m·stride + patch_size)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub window_start: f64,
    pub window_end: f64,
    pub patch_size: f64,
    pub stride: f64,
}

impl PatchSpec {
    pub fn new(window_start: f64, window_end: f64, patch_size: f64, stride: f64) -> Result<Self> {
        if !(patch_size > 0.0) || !patch_size.is_finite() {
            return Err(Error::Config(format!("patch size must be positive, got {patch_size}")));
        }
        if stride != patch_size {
            return Err(Error::Config(format!(
                "only non-overlapping patches are supported (stride {stride} != patch size {patch_size})"
            )));
        }
        if !(window_end > window_start) {
            return Err(Error::Config(format!("empty window [{window_start}, {window_end}]")));
        }
        Ok(PatchSpec {
            window_start,
            window_end,
            patch_size,
            stride,
        })
    }

    /// A single patch spanning the whole window.
    pub fn whole(window_start: f64, window_end: f64) -> Result<Self> {
        let len = window_end - window_start;
        Self::new(window_start, window_end, len, len)
    }

    pub fn num_patches(&self) -> usize {
        let span = self.window_end - self.window_start - self.patch_size;
        if span <= 0.0 {
            return 1;
        }
        // tolerate rounding in ratios such as 22.5 / 1.5
        ((span / self.stride) - 1e-9).ceil() as usize + 1
    }

    pub fn patch_start(&self, m: usize) -> f64 {
        self.window_start + m as f64 * self.stride
    }

    /// Patch of a timestamp under the half-open rule; timestamps past the
    /// last patch are clamped into it.
    pub fn patch_of(&self, t: f64) -> usize {
        let m = ((t - self.window_start) / self.stride).floor();
        let m = if m < 0.0 { 0 } else { m as usize };
        m.min(self.num_patches() - 1)
    }

    /// Position of `t` inside its patch, in `[0, 1)`.
    pub fn offset_in_patch(&self, t: f64) -> f64 {
        let m = self.patch_of(t);
        ((t - self.patch_start(m)) / self.patch_size).clamp(0.0, 1.0 - f64::EPSILON)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub spec: PatchSpec,
    pub num_patches: usize,
    /// Patch index of every observation, per variable.
    pub assignment: Vec<Vec<usize>>,
}

impl PatchGrid {
    /// Observation counts per `(patch, variable)`, patch-major.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        let n = self.assignment.len();
        let mut c = vec![vec![0; n]; self.num_patches];
        for (v, a) in self.assignment.iter().enumerate() {
            for &m in a {
                c[m][v] += 1;
            }
        }
        c
    }
}

pub fn assign_patches(history: &ImtsInstance, spec: &PatchSpec) -> PatchGrid {
    let assignment = history
        .variables
        .iter()
        .map(|obs| obs.iter().map(|o| spec.patch_of(o.timestamp)).collect())
        .collect();
    PatchGrid {
        spec: *spec,
        num_patches: spec.num_patches(),
        assignment,
    }
}
