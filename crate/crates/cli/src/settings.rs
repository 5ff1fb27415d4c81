//! Namespaced `key = value` settings merged from a file and command-line
//! overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use quite_core::config::KvConfig;
use quite_core::data::{generate_synthetic, load_csv, DatasetManifest, ImtsInstance, SyntheticConfig};
use quite_core::harness::TrainConfig;
use quite_core::model::ModelConfig;

const NAMESPACES: [&str; 3] = ["data.", "model.", "train."];

const MANIFEST_KEYS: [&str; 8] = [
    "seed",
    "test_fraction",
    "val_fraction",
    "window_start",
    "window_end",
    "split_time",
    "patch_size",
    "stride",
];

/// Splits `--ns.key value` / `--ns.key=value` pairs out of the argument list.
/// Everything else is returned untouched for clap.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, KvConfig)> {
    let mut rest = Vec::new();
    let mut kv = KvConfig::default();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg
            .strip_prefix("--")
            .filter(|f| NAMESPACES.iter().any(|ns| f.starts_with(ns)))
        else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => kv.set(k, v),
            None => {
                let v = it.next().with_context(|| format!("--{flag} needs a value"))?;
                kv.set(flag, v);
            }
        }
    }
    Ok((rest, kv))
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub data_path: Option<PathBuf>,
    pub manifest: DatasetManifest,
    pub synthetic: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn strip_data(kv: &KvConfig) -> KvConfig {
    let mut out = KvConfig::default();
    for k in kv.keys() {
        if let Some(short) = k.strip_prefix("data.") {
            out.set(short, kv.get_str(k).unwrap_or_default());
        }
    }
    out
}

fn synthetic_from(kv: &KvConfig, manifest: &DatasetManifest) -> Result<SyntheticConfig> {
    let d = SyntheticConfig::default();
    let mut s = SyntheticConfig {
        num_instances: kv.get_or("num_instances", d.num_instances)?,
        num_variables: kv.get_or("num_variables", d.num_variables)?,
        base_rate: kv.get_or("base_rate", d.base_rate)?,
        missing_ratio: kv.get_or("missing_ratio", d.missing_ratio)?,
        frequencies: kv.get_list("frequencies")?.unwrap_or(d.frequencies),
        phases: kv.get_list("phases")?.unwrap_or(d.phases),
        amplitudes: kv.get_list("amplitudes")?.unwrap_or(d.amplitudes),
        coupling: kv.get_or("coupling", d.coupling)?,
        noise_std: kv.get_or("noise_std", d.noise_std)?,
        phase_jitter: kv.get_or("phase_jitter", d.phase_jitter)?,
        level_jitter: kv.get_or("level_jitter", d.level_jitter)?,
        label_by_mean_sign: kv.get_or("label_by_mean_sign", d.label_by_mean_sign)?,
        window: manifest.window_end,
        seed: manifest.seed,
    };
    s.fit_signal_lists();
    s.validate()?;
    Ok(s)
}

fn synthetic_kv(s: &SyntheticConfig) -> KvConfig {
    let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let mut kv = KvConfig::default();
    kv.set("data.num_instances", s.num_instances);
    kv.set("data.num_variables", s.num_variables);
    kv.set("data.base_rate", s.base_rate);
    kv.set("data.missing_ratio", s.missing_ratio);
    kv.set("data.frequencies", list(&s.frequencies));
    kv.set("data.phases", list(&s.phases));
    kv.set("data.amplitudes", list(&s.amplitudes));
    kv.set("data.coupling", s.coupling);
    kv.set("data.noise_std", s.noise_std);
    kv.set("data.phase_jitter", s.phase_jitter);
    kv.set("data.level_jitter", s.level_jitter);
    kv.set("data.label_by_mean_sign", s.label_by_mean_sign);
    kv
}

impl Settings {
    pub fn load(file: Option<&Path>, overrides: &KvConfig) -> Result<Settings> {
        let mut kv = match file {
            Some(p) => KvConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => KvConfig::default(),
        };
        kv.merge(overrides);
        if let Some(bad) = kv.keys().find(|k| !NAMESPACES.iter().any(|ns| k.starts_with(ns))) {
            bail!(quite_core::Error::Config(format!(
                "key `{bad}` is outside the data./model./train. namespaces"
            )));
        }
        let data = strip_data(&kv);
        let manifest = DatasetManifest::from_kv(&data)?;
        if manifest.stride != manifest.patch_size {
            bail!(quite_core::Error::Config(
                "only non-overlapping patches are supported (stride must equal patch_size)".into()
            ));
        }
        let synthetic = synthetic_from(&data, &manifest)?;
        // the data manifest fixes the time axis of the model
        kv.set("model.window_start", manifest.window_start);
        kv.set("model.window_end", manifest.window_end);
        kv.set("model.history_end", manifest.split_time);
        kv.set("model.patch_size", manifest.patch_size);
        if kv.get_str("model.variables").is_none() {
            kv.set("model.variables", synthetic.num_variables);
        }
        Ok(Settings {
            data_path: data.get_str("path").map(PathBuf::from),
            model: ModelConfig::from_kv(&kv)?,
            train: TrainConfig::from_kv(&kv)?,
            manifest,
            synthetic,
        })
    }

    /// Canonical text of every effective setting.
    pub fn effective(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        for k in MANIFEST_KEYS {
            if let Some(v) = self.manifest.to_kv().get_str(k) {
                kv.set(&format!("data.{k}"), v);
            }
        }
        match &self.data_path {
            Some(p) => kv.set("data.path", p.display()),
            None => kv.merge(&synthetic_kv(&self.synthetic)),
        }
        kv.merge(&self.model.to_kv());
        kv.merge(&self.train.to_kv());
        kv
    }

    pub fn hash(&self) -> String {
        self.effective().hash()
    }

    /// Instances from `data.path`, or the synthetic generator when unset.
    pub fn instances(&self) -> Result<Vec<ImtsInstance>> {
        let insts = match &self.data_path {
            Some(p) => load_csv(p).with_context(|| format!("loading {}", p.display()))?,
            None => generate_synthetic(&self.synthetic)?,
        };
        if let Some(i) = insts.iter().find(|i| i.num_variables() != self.model.variables) {
            bail!(quite_core::Error::Config(format!(
                "instance `{}` has {} variables but model.variables = {}",
                i.id,
                i.num_variables(),
                self.model.variables
            )));
        }
        Ok(insts)
    }
}
