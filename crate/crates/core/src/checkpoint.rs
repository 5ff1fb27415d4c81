//! Two-file checkpoints: `<base>.manifest` (model config plus one
//! `param <name> <shape>` line per array) and `<base>.bin` (the arrays as
//! little-endian f64, in manifest order).

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::Manifest;

pub fn manifest_path(base: &Path) -> PathBuf {
    with_suffix(base, "manifest")
}

pub fn blob_path(base: &Path) -> PathBuf {
    with_suffix(base, "bin")
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(vec![]);
    }
    s.split('x')
        .map(|p| p.parse().map_err(|_| Error::Checkpoint(format!("bad shape `{s}`"))))
        .collect()
}

pub fn manifest_text(model: &Model) -> String {
    let mut text = model.config.to_kv().to_text();
    for (name, shape) in model.params.manifest() {
        text.push_str(&format!("param {name} {}\n", format_shape(&shape)));
    }
    text
}

pub fn save_checkpoint(model: &Model, base: &Path) -> Result<()> {
    if let Some(dir) = base.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(manifest_path(base), manifest_text(model))?;
    let mut blob = Vec::with_capacity(model.num_params() * 8);
    for (_, t) in model.params.iter() {
        for v in t.data().iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(blob_path(base), blob)?;
    Ok(())
}

/// Parses a manifest into the model config and the `(name, shape)` list.
pub fn read_manifest(text: &str) -> Result<(ModelConfig, Manifest)> {
    let mut config_lines = String::new();
    let mut params = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("param ") {
            let mut parts = rest.split_whitespace();
            let (Some(name), Some(shape), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Checkpoint(format!("malformed line `{line}`")));
            };
            params.push((name.to_string(), parse_shape(shape)?));
        } else {
            config_lines.push_str(line);
            config_lines.push('\n');
        }
    }
    let config = ModelConfig::from_kv(&KvConfig::parse(&config_lines)?)?;
    Ok((config, params))
}

/// Rebuilds the model from its config and fills in the stored arrays; every
/// name and shape must match the rebuilt model exactly.
pub fn load_checkpoint(base: &Path) -> Result<Model> {
    let (config, stored) = read_manifest(&fs::read_to_string(manifest_path(base))?)?;
    let model = Model::build(&config)?;
    let expected = model.params.manifest();
    if stored.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{} arrays stored, model has {}",
            stored.len(),
            expected.len()
        )));
    }
    for ((sn, ss), (en, es)) in stored.iter().zip(&expected) {
        if sn != en || ss != es {
            return Err(Error::Checkpoint(format!(
                "stored `{sn}` {ss:?} does not match `{en}` {es:?}"
            )));
        }
    }
    let blob = fs::read(blob_path(base))?;
    if blob.len() != model.num_params() * 8 {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, expected {}",
            blob.len(),
            model.num_params() * 8
        )));
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for (_, t) in model.params.iter() {
        let v: Vec<f64> = values.by_ref().take(t.numel()).collect();
        t.set_data(&v)?;
    }
    Ok(model)
}
