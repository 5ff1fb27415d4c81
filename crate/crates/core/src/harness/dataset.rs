use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{split_forecast, thin_observations, DatasetManifest, ForecastSplit, ImtsInstance, Normalizer};
use crate::error::{Error, Result};

/// Instance indices for each split. Fixed by the data seed alone.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles instance indices with `seed`, takes `test_fraction` of them for
/// test, then `val_fraction` of the rest for validation. Index lists come
/// back sorted.
pub fn split_indices(count: usize, test_fraction: f64, val_fraction: f64, seed: u64) -> Result<SplitIndices> {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (count as f64 * test_fraction).round() as usize;
    let rest = count - n_test;
    let n_val = (rest as f64 * val_fraction).round() as usize;
    if rest - n_val == 0 || (val_fraction > 0.0 && n_val == 0) {
        return Err(Error::Config(format!(
            "{count} instances are too few for the requested splits"
        )));
    }
    let mut test = idx[..n_test].to_vec();
    let mut val = idx[n_test..n_test + n_val].to_vec();
    let mut train = idx[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, val, test })
}

/// Normalized forecasting splits.
#[derive(Debug, Clone)]
pub struct ForecastData {
    pub normalizer: Normalizer,
    pub indices: SplitIndices,
    pub train: Vec<ForecastSplit>,
    pub val: Vec<ForecastSplit>,
    pub test: Vec<ForecastSplit>,
}

impl ForecastData {
    /// Instances without any future observation are left out of every split.
    pub fn prepare(instances: &[ImtsInstance], manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let indices = split_indices(instances.len(), manifest.test_fraction, manifest.val_fraction, manifest.seed)?;
        let train_raw: Vec<ImtsInstance> = indices.train.iter().map(|&i| instances[i].clone()).collect();
        let normalizer = Normalizer::fit(&train_raw)?;
        let make = |idx: &[usize]| -> Result<Vec<ForecastSplit>> {
            let mut out = Vec::new();
            for &i in idx {
                let s = split_forecast(&normalizer.transform(&instances[i]), manifest.split_time)?;
                if s.num_queries() > 0 {
                    out.push(s);
                }
            }
            Ok(out)
        };
        Ok(ForecastData {
            train: make(&indices.train)?,
            val: make(&indices.val)?,
            test: make(&indices.test)?,
            normalizer,
            indices,
        })
    }

    /// Drops each history observation with probability `ratio`; targets are
    /// untouched.
    pub fn thin_history(splits: &[ForecastSplit], ratio: f64, seed: u64) -> Result<Vec<ForecastSplit>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x7468_696e);
        splits
            .iter()
            .map(|s| {
                Ok(ForecastSplit {
                    history: thin_observations(&s.history, ratio, &mut rng)?,
                    ..s.clone()
                })
            })
            .collect()
    }
}

/// Normalized classification splits; every instance must carry a label.
#[derive(Debug, Clone)]
pub struct ClassifyData {
    pub normalizer: Normalizer,
    pub indices: SplitIndices,
    pub classes: usize,
    pub train: Vec<ImtsInstance>,
    pub val: Vec<ImtsInstance>,
    pub test: Vec<ImtsInstance>,
}

impl ClassifyData {
    pub fn prepare(instances: &[ImtsInstance], manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        if let Some(bad) = instances.iter().find(|i| i.label.is_none()) {
            return Err(Error::Config(format!("instance `{}` has no label", bad.id)));
        }
        let classes = instances.iter().filter_map(|i| i.label).max().map_or(0, |m| m + 1).max(2);
        let indices = split_indices(instances.len(), manifest.test_fraction, manifest.val_fraction, manifest.seed)?;
        let train_raw: Vec<ImtsInstance> = indices.train.iter().map(|&i| instances[i].clone()).collect();
        let normalizer = Normalizer::fit(&train_raw)?;
        let make = |idx: &[usize]| idx.iter().map(|&i| normalizer.transform(&instances[i])).collect();
        Ok(ClassifyData {
            train: make(&indices.train),
            val: make(&indices.val),
            test: make(&indices.test),
            classes,
            normalizer,
            indices,
        })
    }
}
