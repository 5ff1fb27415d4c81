use crate::data::{fmt_real, Normalizer};
use crate::embed::{EmbeddingKind, QueryInit};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

use super::dataset::ForecastData;
use super::emit::CsvTable;
use super::metrics::{mean_std, median, ForecastMetrics};
use super::train::{eval_forecast, train, EpochRecord, TrainConfig};

/// One trained seed and its test metrics.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub model: Model,
    pub curve: Vec<EpochRecord>,
    pub test: ForecastMetrics,
}

fn normalizer<'a>(tc: &TrainConfig, data: &'a ForecastData) -> Option<&'a Normalizer> {
    tc.untransformed.then_some(&data.normalizer)
}

/// Trains `cfg` once per seed in `tc.seeds` on fixed splits.
pub fn run_seeds(cfg: &ModelConfig, tc: &TrainConfig, data: &ForecastData) -> Result<Vec<SeedRun>> {
    tc.validate()?;
    let mut seeds = tc.seeds.clone();
    seeds.sort_unstable();
    seeds
        .into_iter()
        .map(|seed| {
            let out = train(&ModelConfig { seed, ..cfg.clone() }, tc, &data.train[..], &data.val[..])?;
            let test = eval_forecast(&out.model, &data.test, tc.batch_size, normalizer(tc, data))?;
            Ok(SeedRun {
                seed,
                model: out.model,
                curve: out.curve,
                test,
            })
        })
        .collect()
}

/// Per-seed test errors for one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub mse: Vec<f64>,
    pub mae: Vec<f64>,
}

impl VariantSummary {
    pub fn from_runs(variant: impl Into<String>, runs: &[SeedRun]) -> Self {
        VariantSummary {
            variant: variant.into(),
            mse: runs.iter().map(|r| r.test.mse).collect(),
            mae: runs.iter().map(|r| r.test.mae).collect(),
        }
    }

    pub fn median_mse(&self) -> f64 {
        median(&self.mse)
    }
}

/// `variant, mse_mean, mse_std, mae_mean, mae_std`, population std.
pub fn summary_table(rows: &[VariantSummary]) -> CsvTable {
    let mut t = CsvTable::new(["variant", "mse_mean", "mse_std", "mae_mean", "mae_std"]);
    for r in rows {
        let (mm, ms) = mean_std(&r.mse);
        let (am, as_) = mean_std(&r.mae);
        t.push(vec![
            r.variant.clone(),
            fmt_real(mm),
            fmt_real(ms),
            fmt_real(am),
            fmt_real(as_),
        ]);
    }
    t
}

/// Same splits, seeds and training settings for every embedding variant;
/// everything else in `cfg` is left as is.
pub fn ablate(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    data: &ForecastData,
    variants: &[EmbeddingKind],
) -> Result<Vec<VariantSummary>> {
    variants
        .iter()
        .map(|&embedding| {
            let runs = run_seeds(
                &ModelConfig {
                    embedding,
                    ..cfg.clone()
                },
                tc,
                data,
            )?;
            Ok(VariantSummary::from_runs(embedding.name(), &runs))
        })
        .collect()
}

/// Query-embedding runs under each initialization scheme.
pub fn init_robustness(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    data: &ForecastData,
    inits: &[QueryInit],
) -> Result<Vec<VariantSummary>> {
    inits
        .iter()
        .map(|&query_init| {
            let c = ModelConfig {
                embedding: EmbeddingKind::Quite,
                query_init,
                ..cfg.clone()
            };
            Ok(VariantSummary::from_runs(query_init.name(), &run_seeds(&c, tc, data)?))
        })
        .collect()
}

/// Largest relative gap between per-variant medians, `(max − min) / min`.
pub fn median_spread(rows: &[VariantSummary]) -> f64 {
    let medians: Vec<f64> = rows.iter().map(VariantSummary::median_mse).collect();
    let lo = medians.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = medians.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPoint {
    pub ratio: f64,
    pub mse: Vec<f64>,
    pub mae: Vec<f64>,
}

fn check_ratios(ratios: &[f64]) -> Result<()> {
    match ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        Some(r) => Err(Error::Config(format!("removal ratio {r} outside [0, 1)"))),
        None => Ok(()),
    }
}

/// Evaluates trained runs on test histories thinned at each ratio. The
/// thinning stream depends on the run seed only, so higher ratios remove a
/// superset of the observations removed at lower ones.
pub fn reevaluate_sparsity(
    runs: &[SeedRun],
    tc: &TrainConfig,
    data: &ForecastData,
    ratios: &[f64],
) -> Result<Vec<SparsityPoint>> {
    check_ratios(ratios)?;
    ratios
        .iter()
        .map(|&ratio| {
            let (mut mse, mut mae) = (Vec::new(), Vec::new());
            for run in runs {
                let test = ForecastData::thin_history(&data.test, ratio, run.seed)?;
                let m = eval_forecast(&run.model, &test, tc.batch_size, normalizer(tc, data))?;
                mse.push(m.mse);
                mae.push(m.mae);
            }
            Ok(SparsityPoint { ratio, mse, mae })
        })
        .collect()
}

/// Sweeps `tc.removal_ratios`. By default models are trained once on full
/// histories and re-evaluated; with `tc.retrain_sparsity` every split is
/// thinned and models are retrained per ratio.
pub fn sparsity_sweep(cfg: &ModelConfig, tc: &TrainConfig, data: &ForecastData) -> Result<Vec<SparsityPoint>> {
    check_ratios(&tc.removal_ratios)?;
    if !tc.retrain_sparsity {
        let runs = run_seeds(cfg, tc, data)?;
        return reevaluate_sparsity(&runs, tc, data, &tc.removal_ratios);
    }
    tc.removal_ratios
        .iter()
        .map(|&ratio| {
            let seed = data.indices.train.len() as u64;
            let thinned = ForecastData {
                train: ForecastData::thin_history(&data.train, ratio, seed)?,
                val: ForecastData::thin_history(&data.val, ratio, seed + 1)?,
                test: ForecastData::thin_history(&data.test, ratio, seed + 2)?,
                ..data.clone()
            };
            let runs = run_seeds(cfg, tc, &thinned)?;
            Ok(SparsityPoint {
                ratio,
                mse: runs.iter().map(|r| r.test.mse).collect(),
                mae: runs.iter().map(|r| r.test.mae).collect(),
            })
        })
        .collect()
}

pub fn sparsity_table(points: &[SparsityPoint]) -> CsvTable {
    let mut t = CsvTable::new(["ratio", "mse_median", "mse_mean", "mse_std", "mae_mean", "mae_std"]);
    for p in points {
        let (mm, ms) = mean_std(&p.mse);
        let (am, as_) = mean_std(&p.mae);
        t.push(vec![
            fmt_real(p.ratio),
            fmt_real(median(&p.mse)),
            fmt_real(mm),
            fmt_real(ms),
            fmt_real(am),
            fmt_real(as_),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the lowest validation loss; ties keep the first.
    pub best: usize,
}

impl GridResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }
}

/// Trains every `(D, L, heads)` combination with the first seed and keeps
/// the one with the lowest validation loss. Combinations where `D` is not
/// divisible by the head count are skipped.
pub fn grid_search(cfg: &ModelConfig, tc: &TrainConfig, data: &ForecastData) -> Result<GridResult> {
    tc.validate()?;
    let seed = tc.seeds[0];
    let mut cells = Vec::new();
    for &dim in &tc.grid_dims {
        for &layers in &tc.grid_layers {
            for &heads in &tc.grid_heads {
                if heads == 0 || dim % heads != 0 {
                    continue;
                }
                let c = ModelConfig {
                    dim,
                    layers,
                    heads,
                    seed,
                    ..cfg.clone()
                };
                let out = train(&c, tc, &data.train[..], &data.val[..])?;
                cells.push(GridCell {
                    dim,
                    layers,
                    heads,
                    val_loss: out.best_val_loss,
                });
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Config("grid has no valid (dim, heads) combination".into()));
    }
    let best = (0..cells.len()).fold(0, |b, i| if cells[i].val_loss < cells[b].val_loss { i } else { b });
    Ok(GridResult { cells, best })
}

pub fn grid_table(result: &GridResult) -> CsvTable {
    let mut t = CsvTable::new(["dim", "layers", "heads", "val_loss", "selected"]);
    for (i, c) in result.cells.iter().enumerate() {
        t.push(vec![
            c.dim.to_string(),
            c.layers.to_string(),
            c.heads.to_string(),
            fmt_real(c.val_loss),
            u8::from(i == result.best).to_string(),
        ]);
    }
    t
}
