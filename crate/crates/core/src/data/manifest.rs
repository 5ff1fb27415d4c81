use std::path::Path;

use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Companion `key = value` file describing how a dataset is split and patched.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub split_time: f64,
    pub patch_size: f64,
    pub stride: f64,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            seed: 1,
            test_fraction: 0.2,
            val_fraction: 0.1,
            window_start: 0.0,
            window_end: 48.0,
            split_time: 24.0,
            patch_size: 6.0,
            stride: 6.0,
        }
    }
}

impl DatasetManifest {
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("seed", self.seed);
        kv.set("test_fraction", self.test_fraction);
        kv.set("val_fraction", self.val_fraction);
        kv.set("window_start", self.window_start);
        kv.set("window_end", self.window_end);
        kv.set("split_time", self.split_time);
        kv.set("patch_size", self.patch_size);
        kv.set("stride", self.stride);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = DatasetManifest::default();
        let m = DatasetManifest {
            seed: kv.get_or("seed", d.seed)?,
            test_fraction: kv.get_or("test_fraction", d.test_fraction)?,
            val_fraction: kv.get_or("val_fraction", d.val_fraction)?,
            window_start: kv.get_or("window_start", d.window_start)?,
            window_end: kv.get_or("window_end", d.window_end)?,
            split_time: kv.get_or("split_time", d.split_time)?,
            patch_size: kv.get_or("patch_size", d.patch_size)?,
            stride: kv.get_or("stride", d.stride)?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| (0.0..1.0).contains(&f);
        if !frac_ok(self.test_fraction) || !frac_ok(self.val_fraction) {
            return Err(Error::Config("split fractions must lie in [0, 1)".into()));
        }
        if !(self.split_time > self.window_start && self.split_time <= self.window_end) {
            return Err(Error::Config(format!(
                "split time {} outside ({}, {}]",
                self.split_time, self.window_start, self.window_end
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_kv().save(path)
    }
}
