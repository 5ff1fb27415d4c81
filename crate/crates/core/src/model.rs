//! Full models: embedding, encoder and task head wired over one parameter
//! store.

use std::fmt;
use std::str::FromStr;

use crate::backbones::{Backbone, BackboneFamily};
use crate::config::KvConfig;
use crate::data::{batch_pad, pad_queries, ForecastSplit, ImtsInstance, PatchSpec, QueryBatch};
use crate::embed::{
    Embedding, EmbeddingKind, EmbeddingLevel, EmbeddingOutput, EmbeddingSpec, ObservationInput, QueryInit, TimeEmbedder,
};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::quitepp::{ClassifierHead, ForecastDecoder, HierarchicalEncoder};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Forecast,
    Classify,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forecast" => Ok(Task::Forecast),
            "classify" => Ok(Task::Classify),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Forecast => "forecast",
            Task::Classify => "classify",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    /// Patch/variable hierarchical encoder.
    Hierarchical,
    Backbone(BackboneFamily),
}

impl EncoderKind {
    pub fn level(self) -> EmbeddingLevel {
        match self {
            EncoderKind::Hierarchical => EmbeddingLevel::Patch,
            EncoderKind::Backbone(f) => f.level(),
        }
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchical" => Ok(EncoderKind::Hierarchical),
            other => Ok(EncoderKind::Backbone(other.parse()?)),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderKind::Hierarchical => f.write_str("hierarchical"),
            EncoderKind::Backbone(b) => b.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub classes: usize,
    pub embedding: EmbeddingKind,
    pub encoder: EncoderKind,
    pub variables: usize,
    pub dim: usize,
    pub heads: usize,
    /// Encoder layers, or backbone depth.
    pub layers: usize,
    pub query_init: QueryInit,
    /// Grid slots per cell for the conventional embedding; 0 picks one per
    /// time unit of patch length.
    pub conv_bins: usize,
    pub window_start: f64,
    pub window_end: f64,
    /// End of the observed history; the forecast split time.
    pub history_end: f64,
    pub patch_size: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            task: Task::Forecast,
            classes: 2,
            embedding: EmbeddingKind::Quite,
            encoder: EncoderKind::Hierarchical,
            variables: 4,
            dim: 64,
            heads: 4,
            layers: 1,
            query_init: QueryInit::RandomNormal,
            conv_bins: 0,
            window_start: 0.0,
            window_end: 48.0,
            history_end: 24.0,
            patch_size: 6.0,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn level(&self) -> EmbeddingLevel {
        self.encoder.level()
    }

    /// Patching of the history window.
    pub fn patch_spec(&self) -> Result<PatchSpec> {
        match self.level() {
            EmbeddingLevel::Variable => PatchSpec::whole(self.window_start, self.history_end),
            EmbeddingLevel::Patch => PatchSpec::new(self.window_start, self.history_end, self.patch_size, self.patch_size),
        }
    }

    pub fn num_patches(&self) -> Result<usize> {
        Ok(self.patch_spec()?.num_patches())
    }

    pub fn conv_bins(&self) -> Result<usize> {
        if self.conv_bins > 0 {
            return Ok(self.conv_bins);
        }
        Ok((self.patch_spec()?.patch_size.ceil() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.variables == 0 || self.dim == 0 {
            return Err(Error::Config("variables and width must be positive".into()));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.encoder == EncoderKind::Hierarchical && self.layers == 0 {
            return Err(Error::Config("hierarchical encoder needs at least one layer".into()));
        }
        if self.task == Task::Classify && self.classes < 2 {
            return Err(Error::Config("classification needs at least 2 classes".into()));
        }
        if !(self.window_end > self.window_start) || !(self.history_end > self.window_start) || self.history_end > self.window_end
        {
            return Err(Error::Config(format!(
                "inconsistent window [{}, {}] with history end {}",
                self.window_start, self.window_end, self.history_end
            )));
        }
        self.patch_spec()?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("model.task", self.task);
        kv.set("model.classes", self.classes);
        kv.set("model.embedding", self.embedding);
        kv.set("model.encoder", self.encoder);
        kv.set("model.variables", self.variables);
        kv.set("model.dim", self.dim);
        kv.set("model.heads", self.heads);
        kv.set("model.layers", self.layers);
        kv.set("model.query_init", self.query_init);
        kv.set("model.conv_bins", self.conv_bins);
        kv.set("model.window_start", self.window_start);
        kv.set("model.window_end", self.window_end);
        kv.set("model.history_end", self.history_end);
        kv.set("model.patch_size", self.patch_size);
        kv.set("model.seed", self.seed);
        kv
    }

    /// Reads `model.*` keys; absent keys keep their defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = ModelConfig::default();
        let c = ModelConfig {
            task: kv.get_or("model.task", d.task)?,
            classes: kv.get_or("model.classes", d.classes)?,
            embedding: kv.get_or("model.embedding", d.embedding)?,
            encoder: kv.get_or("model.encoder", d.encoder)?,
            variables: kv.get_or("model.variables", d.variables)?,
            dim: kv.get_or("model.dim", d.dim)?,
            heads: kv.get_or("model.heads", d.heads)?,
            layers: kv.get_or("model.layers", d.layers)?,
            query_init: kv.get_or("model.query_init", d.query_init)?,
            conv_bins: kv.get_or("model.conv_bins", d.conv_bins)?,
            window_start: kv.get_or("model.window_start", d.window_start)?,
            window_end: kv.get_or("model.window_end", d.window_end)?,
            history_end: kv.get_or("model.history_end", d.history_end)?,
            patch_size: kv.get_or("model.patch_size", d.patch_size)?,
            seed: kv.get_or("model.seed", d.seed)?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub enum Encoder {
    Hierarchical(HierarchicalEncoder),
    Backbone(Backbone),
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Head {
    Forecast(ForecastDecoder),
    Classify(ClassifierHead),
}

/// Parameter-name prefixes: `time.*` (shared time embedding), `embed.*`,
/// `encoder.*` or `backbone.*`, and `decoder.*` or `head.*`.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub time: TimeEmbedder,
    pub embedding: Embedding,
    pub encoder: Encoder,
    pub head: Head,
}

impl Model {
    pub fn build(config: &ModelConfig) -> Result<Model> {
        config.validate()?;
        let c = config;
        let mut ps = ParamStore::new(c.seed);
        let time = TimeEmbedder::new(&mut ps, "time", c.dim)?;
        let spec = EmbeddingSpec {
            kind: c.embedding,
            level: c.level(),
            patches: c.num_patches()?,
            variables: c.variables,
            dim: c.dim,
            heads: c.heads,
            query_init: c.query_init,
            conv_bins: c.conv_bins()?,
        };
        let embedding = Embedding::build(&mut ps, &spec, &time)?;
        let encoder = match c.encoder {
            EncoderKind::Hierarchical => Encoder::Hierarchical(HierarchicalEncoder::new(
                &mut ps,
                "encoder",
                c.variables,
                c.dim,
                c.heads,
                c.layers,
            )?),
            EncoderKind::Backbone(f) => Encoder::Backbone(Backbone::new(&mut ps, "backbone", f, c.layers, c.dim, c.heads)?),
        };
        let head = match c.task {
            Task::Forecast => Head::Forecast(ForecastDecoder::new(&mut ps, "decoder", &time, c.heads)?),
            Task::Classify => Head::Classify(ClassifierHead::new(&mut ps, "head", c.variables, c.dim, c.classes)?),
        };
        Ok(Model {
            config: c.clone(),
            params: ps,
            time,
            embedding,
            encoder,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Pads instances (their history, for forecasting) onto the model's patch grid.
    pub fn observation_input(&self, instances: &[&ImtsInstance]) -> Result<ObservationInput> {
        if let Some(bad) = instances.iter().find(|i| i.num_variables() != self.config.variables) {
            return Err(Error::InconsistentVariables {
                expected: self.config.variables,
                found: bad.num_variables(),
            });
        }
        let batch = batch_pad(instances, &self.config.patch_spec()?)?;
        ObservationInput::from_batch(&batch, self.config.window_start, self.config.window_end)
    }

    pub fn query_batch(&self, splits: &[&ForecastSplit]) -> QueryBatch {
        pad_queries(splits, self.config.variables)
    }

    /// Rescaled query times `[B × N × Q]`.
    pub fn query_times(&self, queries: &QueryBatch) -> Result<Tensor> {
        Tensor::new(
            &[queries.batch, queries.variables, queries.slots],
            queries.scaled_times(self.config.window_start, self.config.window_end),
        )
    }

    pub fn rescale_time(&self, t: f64) -> f64 {
        (t - self.config.window_start) / (self.config.window_end - self.config.window_start)
    }

    pub fn embed(&self, input: &ObservationInput) -> Result<EmbeddingOutput> {
        self.embedding.forward(input)
    }

    /// `(C [B × N × D], E [B × M × N × D])`
    pub fn encode(&self, input: &ObservationInput) -> Result<(Tensor, Tensor)> {
        let emb = self.embed(input)?;
        match &self.encoder {
            Encoder::Hierarchical(h) => h.encode(&emb.embeddings),
            Encoder::Backbone(b) => b.forward(&emb),
        }
    }

    pub fn decoder(&self) -> Result<&ForecastDecoder> {
        match &self.head {
            Head::Forecast(d) => Ok(d),
            Head::Classify(_) => Err(Error::Config("model was built for classification".into())),
        }
    }

    pub fn classifier(&self) -> Result<&ClassifierHead> {
        match &self.head {
            Head::Classify(h) => Ok(h),
            Head::Forecast(_) => Err(Error::Config("model was built for forecasting".into())),
        }
    }

    /// Predictions `[B × N × Q]` at rescaled query times `[B × N × Q]`.
    pub fn forecast(&self, input: &ObservationInput, query_times: &Tensor) -> Result<Tensor> {
        let decoder = self.decoder()?;
        let (c, e) = self.encode(input)?;
        decoder.forward(&c, &e, query_times)
    }

    /// Predictions `[B × L_pred × N]` at shared rescaled times.
    pub fn forecast_grid(&self, input: &ObservationInput, taus: &[f64]) -> Result<Tensor> {
        let decoder = self.decoder()?;
        let (c, e) = self.encode(input)?;
        decoder.forward_grid(&c, &e, taus)
    }

    /// Masked MSE over padded queries.
    pub fn forecast_loss(&self, input: &ObservationInput, queries: &QueryBatch) -> Result<Tensor> {
        let pred = self.forecast(input, &self.query_times(queries)?)?;
        pred.masked_mse(&queries.targets, &queries.masks)
    }

    /// Logits `[B × classes]`.
    pub fn classify(&self, input: &ObservationInput) -> Result<Tensor> {
        let head = self.classifier()?;
        let (c, _) = self.encode(input)?;
        head.forward(&c)
    }

    pub fn classify_loss(&self, input: &ObservationInput, labels: &[usize]) -> Result<Tensor> {
        let logits = self.classify(input)?;
        self.classifier()?.loss(&logits, labels)
    }

    /// Analytic parameter count for a configuration.
    pub fn expected_params(c: &ModelConfig) -> Result<usize> {
        use crate::nn::{AttnBlock, Linear};
        let d = c.dim;
        let m = c.num_patches()?;
        let cells = if c.level() == EmbeddingLevel::Variable {
            c.variables
        } else {
            m * c.variables
        };
        let time = 2 * d;
        let value = 2 * d;
        let embed = match c.embedding {
            EmbeddingKind::Conventional => Linear::num_params(c.conv_bins()?, d),
            EmbeddingKind::Add => value,
            EmbeddingKind::Concat => Linear::num_params(2, d),
            EmbeddingKind::MeanPool => value + AttnBlock::num_params(d),
            EmbeddingKind::Quite => value + cells * d + AttnBlock::num_params(d),
        };
        let encoder = match c.encoder {
            EncoderKind::Hierarchical => HierarchicalEncoder::num_params(c.variables, d, c.layers),
            EncoderKind::Backbone(_) => Backbone::num_params(c.layers, d),
        };
        let head = match c.task {
            Task::Forecast => ForecastDecoder::num_params(d),
            Task::Classify => ClassifierHead::num_params(c.variables, d, c.classes),
        };
        Ok(time + embed + encoder + head)
    }
}
