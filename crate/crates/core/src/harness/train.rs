use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{classification_metrics, forecast_metrics, ClassMetrics, ForecastMetrics};
use crate::config::KvConfig;
use crate::data::{ForecastSplit, ImtsInstance, Normalizer};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::Adam;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
    pub grid_dims: Vec<usize>,
    pub grid_layers: Vec<usize>,
    pub grid_heads: Vec<usize>,
    pub removal_ratios: Vec<f64>,
    /// Retrain on thinned data in the sparsity sweep instead of re-evaluating.
    pub retrain_sparsity: bool,
    /// Report forecast metrics in original units.
    pub untransformed: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            patience: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seeds: vec![1, 2, 3, 4, 5],
            grid_dims: vec![32, 64],
            grid_layers: vec![1, 2, 3],
            grid_heads: vec![1, 2, 4, 8],
            removal_ratios: vec![0.0, 0.25, 0.5, 0.75],
            retrain_sparsity: false,
            untransformed: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if let Some(r) = self.removal_ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("removal ratio {r} outside [0, 1)")));
        }
        Ok(())
    }

    fn join<T: ToString>(v: &[T]) -> String {
        v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("train.epochs", self.epochs);
        kv.set("train.patience", self.patience);
        kv.set("train.batch_size", self.batch_size);
        kv.set("train.learning_rate", self.learning_rate);
        kv.set("train.seeds", Self::join(&self.seeds));
        kv.set("train.grid_dims", Self::join(&self.grid_dims));
        kv.set("train.grid_layers", Self::join(&self.grid_layers));
        kv.set("train.grid_heads", Self::join(&self.grid_heads));
        kv.set("train.removal_ratios", Self::join(&self.removal_ratios));
        kv.set("train.retrain_sparsity", self.retrain_sparsity);
        kv.set("train.untransformed", self.untransformed);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = TrainConfig::default();
        let c = TrainConfig {
            epochs: kv.get_or("train.epochs", d.epochs)?,
            patience: kv.get_or("train.patience", d.patience)?,
            batch_size: kv.get_or("train.batch_size", d.batch_size)?,
            learning_rate: kv.get_or("train.learning_rate", d.learning_rate)?,
            seeds: kv.get_list("train.seeds")?.unwrap_or(d.seeds),
            grid_dims: kv.get_list("train.grid_dims")?.unwrap_or(d.grid_dims),
            grid_layers: kv.get_list("train.grid_layers")?.unwrap_or(d.grid_layers),
            grid_heads: kv.get_list("train.grid_heads")?.unwrap_or(d.grid_heads),
            removal_ratios: kv.get_list("train.removal_ratios")?.unwrap_or(d.removal_ratios),
            retrain_sparsity: kv.get_or("train.retrain_sparsity", d.retrain_sparsity)?,
            untransformed: kv.get_or("train.untransformed", d.untransformed)?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters restored to the best validation epoch.
    pub model: Model,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Epoch at which early stopping fired, if it did.
    pub stopped_at: Option<usize>,
}

/// A set of training samples that can be batched into a scalar loss.
pub trait Samples {
    fn count(&self) -> usize;
    /// Loss over the selected samples and its weight for averaging.
    fn loss(&self, model: &Model, idx: &[usize]) -> Result<(Tensor, f64)>;
}

impl Samples for [ForecastSplit] {
    fn count(&self) -> usize {
        self.len()
    }

    fn loss(&self, model: &Model, idx: &[usize]) -> Result<(Tensor, f64)> {
        let splits: Vec<&ForecastSplit> = idx.iter().map(|&i| &self[i]).collect();
        let histories: Vec<&ImtsInstance> = splits.iter().map(|s| &s.history).collect();
        let input = model.observation_input(&histories)?;
        let queries = model.query_batch(&splits);
        Ok((model.forecast_loss(&input, &queries)?, queries.count() as f64))
    }
}

impl Samples for [ImtsInstance] {
    fn count(&self) -> usize {
        self.len()
    }

    fn loss(&self, model: &Model, idx: &[usize]) -> Result<(Tensor, f64)> {
        let insts: Vec<&ImtsInstance> = idx.iter().map(|&i| &self[i]).collect();
        let labels = insts
            .iter()
            .map(|i| {
                i.label
                    .ok_or_else(|| Error::Config(format!("instance `{}` has no label", i.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let input = model.observation_input(&insts)?;
        Ok((model.classify_loss(&input, &labels)?, labels.len() as f64))
    }
}

fn numerical(err: Error, epoch: usize) -> Error {
    match err {
        Error::NonFinite { .. } => Error::Divergence { epoch },
        other => other,
    }
}

/// Weighted mean loss over all samples, without parameter updates.
pub fn evaluate_loss<S: Samples + ?Sized>(model: &Model, samples: &S, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..samples.count()).collect();
    let (mut total, mut weight) = (0.0, 0.0);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (loss, w) = samples.loss(model, chunk)?;
        total += loss.item() * w;
        weight += w;
    }
    if weight == 0.0 {
        return Err(Error::EmptyTargets);
    }
    Ok(total / weight)
}

/// Adam training with early stopping on validation loss (training loss when
/// `val` is empty). Deterministic given the model seed.
pub fn train<S: Samples + ?Sized>(config: &ModelConfig, tc: &TrainConfig, train: &S, val: &S) -> Result<TrainOutcome> {
    tc.validate()?;
    let model = Model::build(config)?;
    train_model(model, tc, train, val)
}

pub fn train_model<S: Samples + ?Sized>(model: Model, tc: &TrainConfig, train: &S, val: &S) -> Result<TrainOutcome> {
    if train.count() == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut adam = Adam::new(tc.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    rng.set_stream(0x7368_7566);
    let mut order: Vec<usize> = (0..train.count()).collect();
    let mut curve = Vec::new();
    let mut best = (f64::INFINITY, 0usize);
    let mut best_params = model.params.snapshot();
    let mut since_best = 0;
    let mut stopped_at = None;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut weight) = (0.0, 0.0);
        for chunk in order.chunks(tc.batch_size) {
            let (loss, w) = train.loss(&model, chunk).map_err(|e| numerical(e, epoch))?;
            loss.backward()?;
            adam.step(&model.params)?;
            total += loss.item() * w;
            weight += w;
        }
        let train_loss = total / weight;
        let val_loss = if val.count() > 0 {
            evaluate_loss(&model, val, tc.batch_size).map_err(|e| numerical(e, epoch))?
        } else {
            train_loss
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch);
            best_params = model.params.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                stopped_at = Some(epoch);
                break;
            }
        }
    }
    model.params.restore(&best_params)?;
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch: best.1,
        best_val_loss: best.0,
        stopped_at,
    })
}

/// One forecast with its context.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub instance: String,
    pub variable: usize,
    pub timestamp: f64,
    pub truth: f64,
    pub prediction: f64,
}

/// Predictions for every query, in split order then query order. With a
/// normalizer, values are mapped back to original units.
pub fn predict_forecast(
    model: &Model,
    splits: &[ForecastSplit],
    batch_size: usize,
    normalizer: Option<&Normalizer>,
) -> Result<Vec<ForecastRecord>> {
    let mut out = Vec::new();
    for chunk in splits.chunks(batch_size.max(1)) {
        let refs: Vec<&ForecastSplit> = chunk.iter().collect();
        let histories: Vec<&ImtsInstance> = refs.iter().map(|s| &s.history).collect();
        let input = model.observation_input(&histories)?;
        let queries = model.query_batch(&refs);
        let pred = model.forecast(&input, &model.query_times(&queries)?)?.to_vec();
        let n = queries.variables;
        let q = queries.slots;
        for (b, s) in chunk.iter().enumerate() {
            let mut used = vec![0usize; n];
            for (query, &y) in s.queries.iter().zip(&s.targets) {
                let v = query.variable;
                let p = pred[(b * n + v) * q + used[v]];
                used[v] += 1;
                let (truth, prediction) = match normalizer {
                    Some(norm) => (norm.untransform_value(v, y), norm.untransform_value(v, p)),
                    None => (y, p),
                };
                out.push(ForecastRecord {
                    instance: s.history.id.clone(),
                    variable: v,
                    timestamp: query.timestamp,
                    truth,
                    prediction,
                });
            }
        }
    }
    Ok(out)
}

pub fn eval_forecast(
    model: &Model,
    splits: &[ForecastSplit],
    batch_size: usize,
    normalizer: Option<&Normalizer>,
) -> Result<ForecastMetrics> {
    let records = predict_forecast(model, splits, batch_size, normalizer)?;
    let pred: Vec<f64> = records.iter().map(|r| r.prediction).collect();
    let truth: Vec<f64> = records.iter().map(|r| r.truth).collect();
    forecast_metrics(&pred, &truth)
}

/// Error of always predicting the training mean, which is 0 after
/// normalization.
pub fn mean_baseline(splits: &[ForecastSplit]) -> Result<ForecastMetrics> {
    let truth: Vec<f64> = splits.iter().flat_map(|s| s.targets.iter().copied()).collect();
    forecast_metrics(&vec![0.0; truth.len()], &truth)
}

/// Class probabilities `[samples × classes]`, row-major.
pub fn predict_proba(model: &Model, instances: &[ImtsInstance], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for chunk in instances.chunks(batch_size.max(1)) {
        let refs: Vec<&ImtsInstance> = chunk.iter().collect();
        let logits = model.classify(&model.observation_input(&refs)?)?;
        let k = logits.shape()[1];
        for row in logits.to_vec().chunks(k) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| v / s));
        }
    }
    Ok(out)
}

pub fn eval_classify(model: &Model, instances: &[ImtsInstance], batch_size: usize) -> Result<ClassMetrics> {
    let labels = instances
        .iter()
        .map(|i| {
            i.label
                .ok_or_else(|| Error::Config(format!("instance `{}` has no label", i.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let probs = predict_proba(model, instances, batch_size)?;
    classification_metrics(&labels, &probs, model.config.classes)
}
