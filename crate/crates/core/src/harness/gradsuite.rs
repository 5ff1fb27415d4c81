use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImtsInstance;
use crate::embed::EmbeddingKind;
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, finite_diff_check_params, GradReport};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

/// Which part of the stack a suite run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    Ops,
    Embed,
    Model,
    All,
}

impl FromStr for GradScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(GradScope::Ops),
            "embed" => Ok(GradScope::Embed),
            "model" => Ok(GradScope::Model),
            "all" => Ok(GradScope::All),
            _ => Err(Error::Config(format!(
                "unknown gradient scope `{s}` (ops, embed, model, all)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradEntry {
    pub name: String,
    pub report: GradReport,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GradSuiteConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Random restarts for the per-op checks.
    pub seeds: u64,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        GradSuiteConfig {
            step: crate::gradcheck::DEFAULT_STEP,
            rel_tol: crate::gradcheck::DEFAULT_REL_TOL,
            seeds: 5,
        }
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

type Case = Box<dyn Fn(&Tensor) -> Result<Tensor>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Tensor, Case)> {
    let x = random(&[2, 3], rng);
    let other = random(&[2, 3], rng);
    let row = random(&[3], rng);
    let w = random(&[3, 4], rng);
    let weights = random(&[2, 3], rng);
    let gain = random(&[3], rng);
    let bias = random(&[3], rng);
    let lhs = random(&[2, 2, 3], rng);
    let rhs = random(&[2, 3, 2], rng);
    let mask = Tensor::new(&[2, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).expect("static shape");
    let target: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ws = weights.clone();
    let weighted = move |y: Tensor| y.mul(&ws)?.sum();
    let cases: Vec<(&'static str, Tensor, Case)> = vec![
        (
            "add",
            x.clone(),
            Box::new({
                let (o, f) = (other.clone(), weighted.clone());
                move |x| f(x.add(&o)?)
            }),
        ),
        (
            "sub",
            x.clone(),
            Box::new({
                let (o, f) = (row.clone(), weighted.clone());
                move |x| f(x.sub(&o)?)
            }),
        ),
        (
            "mul",
            x.clone(),
            Box::new({
                let o = other.clone();
                move |x| x.mul(&o)?.mul(x)?.sum()
            }),
        ),
        (
            "scale",
            x.clone(),
            Box::new({
                let f = weighted.clone();
                move |x| f(x.scale(-2.5)?)
            }),
        ),
        (
            "sin",
            x.clone(),
            Box::new({
                let f = weighted.clone();
                move |x| f(x.sin()?)
            }),
        ),
        (
            "relu",
            x.clone(),
            Box::new({
                let f = weighted.clone();
                move |x| f(x.relu()?)
            }),
        ),
        (
            "matmul",
            x.clone(),
            Box::new({
                let w = w.clone();
                move |x| x.matmul(&w)?.sin()?.sum()
            }),
        ),
        ("matmul_rhs", rhs, Box::new(move |b| lhs.matmul(b)?.sin()?.sum())),
        (
            "transpose",
            x.clone(),
            Box::new({
                let o = other.clone();
                move |x| x.transpose_last()?.matmul(&o)?.sin()?.sum()
            }),
        ),
        (
            "concat",
            x.clone(),
            Box::new({
                let o = other.clone();
                move |x| Tensor::concat(&[x, &o, x], 1)?.sin()?.sum()
            }),
        ),
        ("narrow", x.clone(), Box::new(|x| x.narrow(1, 1, 2)?.sin()?.sum())),
        ("sum_axis", x.clone(), Box::new(|x| x.sum_axis(0)?.sin()?.sum())),
        (
            "broadcast_to",
            x.clone(),
            Box::new(|x| x.reshape(&[2, 1, 3])?.broadcast_to(&[2, 4, 3])?.sin()?.sum()),
        ),
        (
            "masked_softmax",
            x.clone(),
            Box::new({
                let f = weighted.clone();
                move |x| f(x.masked_softmax(&mask)?)
            }),
        ),
        (
            "layer_norm",
            x.clone(),
            Box::new({
                let (g, b, f) = (gain.clone(), bias.clone(), weighted.clone());
                move |x| f(x.layer_norm(&g, &b)?)
            }),
        ),
        (
            "layer_norm_gain",
            gain.clone(),
            Box::new({
                let (x, b, f) = (x.clone(), bias.clone(), weighted.clone());
                move |g| f(x.layer_norm(g, &b)?)
            }),
        ),
        (
            "layer_norm_bias",
            bias,
            Box::new({
                let (x, g, f) = (x.clone(), gain, weighted.clone());
                move |b| f(x.layer_norm(&g, b)?)
            }),
        ),
        (
            "masked_mse",
            x.clone(),
            Box::new(move |x| x.masked_mse(&target, &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0])),
        ),
        ("cross_entropy", x, Box::new(|x| x.cross_entropy(&[2, 0]))),
    ];
    cases
}

/// Finite-difference check of every differentiable operation, merged over
/// `seeds` random draws.
pub fn check_ops(cfg: &GradSuiteConfig) -> Result<Vec<GradEntry>> {
    let mut merged: Vec<(&'static str, GradReport)> = Vec::new();
    for seed in 0..cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, (name, x, f)) in op_cases(&mut rng).into_iter().enumerate() {
            let r = finite_diff_check(&f, &x, cfg.step)?;
            match merged.get_mut(i) {
                Some((_, acc)) => acc.merge(&r),
                None => merged.push((name, r)),
            }
        }
    }
    Ok(merged
        .into_iter()
        .map(|(name, report)| GradEntry {
            name: format!("op.{name}"),
            passed: report.passes(cfg.rel_tol),
            report,
        })
        .collect())
}

/// Smallest full configuration: two patches, two variables, width 4, one
/// layer, one head.
pub fn tiny_config(embedding: EmbeddingKind) -> ModelConfig {
    ModelConfig {
        embedding,
        variables: 2,
        dim: 4,
        heads: 1,
        layers: 1,
        window_start: 0.0,
        window_end: 4.0,
        history_end: 2.0,
        patch_size: 1.0,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn tiny_instance(rng: &mut ChaCha8Rng) -> Result<ImtsInstance> {
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    while rows.len() < 5 {
        let t = (rng.random_range(0.0..2.0) * 1e3f64).round() / 1e3;
        let v = rng.random_range(0..2);
        if !rows.iter().any(|&(u, s, _)| u == v && s == t) {
            rows.push((v, t, rng.random_range(-2.0..2.0)));
        }
    }
    ImtsInstance::from_rows("grad", 2, rows)
}

fn params_with_prefix(model: &Model, prefixes: &[&str]) -> Vec<(String, Tensor)> {
    model
        .params
        .iter()
        .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn collect(prefix: &str, reports: Vec<(String, GradReport)>, tol: f64) -> Vec<GradEntry> {
    reports
        .into_iter()
        .map(|(name, report)| GradEntry {
            name: format!("{prefix}.{name}"),
            passed: report.passes(tol),
            report,
        })
        .collect()
}

/// Every embedding kind, checked with respect to its own parameters and the
/// shared time embedding.
pub fn check_embeddings(cfg: &GradSuiteConfig) -> Result<Vec<GradEntry>> {
    let mut out = Vec::new();
    for kind in EmbeddingKind::ALL {
        let model = Model::build(&tiny_config(kind))?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inst = tiny_instance(&mut rng)?;
        let input = model.observation_input(&[&inst])?;
        let shape = model.embed(&input)?.embeddings.shape().to_vec();
        let weights = random(&shape, &mut rng);
        let params = params_with_prefix(&model, &["embed.", "time."]);
        let reports = finite_diff_check_params(|| model.embed(&input)?.embeddings.mul(&weights)?.sum(), &params, cfg.step)?;
        out.extend(collect(&format!("embed.{}", kind.name()), reports, cfg.rel_tol));
    }
    Ok(out)
}

/// The whole forecaster, all parameters, two future queries per variable.
pub fn check_model(cfg: &GradSuiteConfig) -> Result<Vec<GradEntry>> {
    let model = Model::build(&tiny_config(EmbeddingKind::Quite))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inst = tiny_instance(&mut rng)?;
    let input = model.observation_input(&[&inst])?;
    let taus = [0.6, 0.85];
    let target: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let params = params_with_prefix(&model, &[""]);
    let reports = finite_diff_check_params(|| model.forecast_grid(&input, &taus)?.mse(&target), &params, cfg.step)?;
    Ok(collect("model", reports, cfg.rel_tol))
}

pub fn grad_check_suite(scope: GradScope, cfg: &GradSuiteConfig) -> Result<Vec<GradEntry>> {
    let mut out = Vec::new();
    if matches!(scope, GradScope::Ops | GradScope::All) {
        out.extend(check_ops(cfg)?);
    }
    if matches!(scope, GradScope::Embed | GradScope::All) {
        out.extend(check_embeddings(cfg)?);
    }
    if matches!(scope, GradScope::Model | GradScope::All) {
        out.extend(check_model(cfg)?);
    }
    Ok(out)
}
