//! Padding of instances into dense, masked arrays.

use super::instance::ImtsInstance;
use super::patch::PatchSpec;
use super::split::ForecastSplit;
use crate::error::{Error, Result};

/// Observations laid out as `[B × M × N × L]` (patch, then variable, then
/// slot). Variable-level batches use a single patch spanning the window.
/// Padded slots carry value 0, timestamp 0, mask 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub batch: usize,
    pub patches: usize,
    pub variables: usize,
    pub slots: usize,
    pub values: Vec<f64>,
    /// Raw timestamps.
    pub times: Vec<f64>,
    pub masks: Vec<f64>,
    /// Position of each observation inside its patch, in `[0, 1)`.
    pub offsets: Vec<f64>,
    pub spec: PatchSpec,
}

impl PaddedBatch {
    pub fn index(&self, b: usize, m: usize, n: usize, l: usize) -> usize {
        ((b * self.patches + m) * self.variables + n) * self.slots + l
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.patches, self.variables, self.slots]
    }

    /// 1 where a `(b, m, n)` cell holds at least one real observation.
    pub fn cell_valid(&self) -> Vec<f64> {
        self.masks
            .chunks(self.slots)
            .map(|c| if c.iter().any(|&m| m != 0.0) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Timestamps mapped onto `[0, 1]` over the given window.
    pub fn scaled_times(&self, window_start: f64, window_end: f64) -> Vec<f64> {
        let span = window_end - window_start;
        self.times
            .iter()
            .zip(&self.masks)
            .map(|(&t, &m)| if m != 0.0 { (t - window_start) / span } else { 0.0 })
            .collect()
    }

    pub fn total_mask(&self) -> usize {
        self.masks.iter().filter(|&&m| m != 0.0).count()
    }
}

pub fn batch_pad(instances: &[&ImtsInstance], spec: &PatchSpec) -> Result<PaddedBatch> {
    let n = instances.first().map_or(0, |i| i.num_variables());
    if let Some(bad) = instances.iter().find(|i| i.num_variables() != n) {
        return Err(Error::InconsistentVariables {
            expected: n,
            found: bad.num_variables(),
        });
    }
    let m = spec.num_patches();
    let b = instances.len();
    let mut cells: Vec<Vec<(f64, f64)>> = vec![Vec::new(); b * m * n];
    for (bi, inst) in instances.iter().enumerate() {
        for (v, obs) in inst.variables.iter().enumerate() {
            for o in obs {
                let p = spec.patch_of(o.timestamp);
                cells[(bi * m + p) * n + v].push((o.timestamp, o.value));
            }
        }
    }
    let slots = cells.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let total = b * m * n * slots;
    let mut out = PaddedBatch {
        batch: b,
        patches: m,
        variables: n,
        slots,
        values: vec![0.0; total],
        times: vec![0.0; total],
        masks: vec![0.0; total],
        offsets: vec![0.0; total],
        spec: *spec,
    };
    for (c, cell) in cells.iter().enumerate() {
        for (l, &(t, x)) in cell.iter().enumerate() {
            let i = c * slots + l;
            out.values[i] = x;
            out.times[i] = t;
            out.masks[i] = 1.0;
            out.offsets[i] = spec.offset_in_patch(t);
        }
    }
    Ok(out)
}

/// Future queries laid out as `[B × N × Q]`, padded per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub batch: usize,
    pub variables: usize,
    pub slots: usize,
    pub times: Vec<f64>,
    pub targets: Vec<f64>,
    pub masks: Vec<f64>,
}

impl QueryBatch {
    pub fn scaled_times(&self, window_start: f64, window_end: f64) -> Vec<f64> {
        let span = window_end - window_start;
        self.times
            .iter()
            .zip(&self.masks)
            .map(|(&t, &m)| if m != 0.0 { (t - window_start) / span } else { 0.0 })
            .collect()
    }

    pub fn count(&self) -> usize {
        self.masks.iter().filter(|&&m| m != 0.0).count()
    }
}

pub fn pad_queries(splits: &[&ForecastSplit], num_variables: usize) -> QueryBatch {
    let b = splits.len();
    let mut cells: Vec<Vec<(f64, f64)>> = vec![Vec::new(); b * num_variables];
    for (bi, s) in splits.iter().enumerate() {
        for (q, &y) in s.queries.iter().zip(&s.targets) {
            cells[bi * num_variables + q.variable].push((q.timestamp, y));
        }
    }
    let slots = cells.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let total = b * num_variables * slots;
    let mut out = QueryBatch {
        batch: b,
        variables: num_variables,
        slots,
        times: vec![0.0; total],
        targets: vec![0.0; total],
        masks: vec![0.0; total],
    };
    for (c, cell) in cells.iter().enumerate() {
        for (l, &(t, y)) in cell.iter().enumerate() {
            out.times[c * slots + l] = t;
            out.targets[c * slots + l] = y;
            out.masks[c * slots + l] = 1.0;
        }
    }
    out
}
