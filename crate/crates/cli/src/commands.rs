use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use quite_core::checkpoint::{load_checkpoint, save_checkpoint};
use quite_core::config::KvConfig;
use quite_core::data::{fmt_real, save_csv};
use quite_core::embed::EmbeddingKind;
use quite_core::harness::{
    ablate, embedding_rows, emit_plots, estimate_cost, eval_classify, eval_forecast, grad_check_suite, grid_search, grid_table,
    loss_table, predict_forecast, sparsity_sweep, sparsity_table, summary_table, train, ClassifyData, CostExtents, CsvTable,
    EpochRecord, ForecastData, GradScope, GradSuiteConfig, RunArtifacts,
};
use quite_core::model::{Model, ModelConfig, Task};

use crate::settings::Settings;
use crate::{Cli, Command, CostArgs, RunArgs};

/// Raised when a gradient check fails; maps to the numerical exit code.
#[derive(Debug)]
pub struct GradFailure(pub usize);

impl std::fmt::Display for GradFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} gradient checks failed", self.0)
    }
}

impl std::error::Error for GradFailure {}

pub fn run(cli: Cli, overrides: &KvConfig) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref(), overrides)?;
    match cli.command {
        Command::Gen { out } => gen(&settings, &out),
        Command::Train(args) => train_cmd(&settings, &args),
        Command::Eval { checkpoint, out } => eval(&settings, &checkpoint, out.as_deref()),
        Command::Ablate { out, variants } => ablate_cmd(&settings, &out, &variants),
        Command::SweepSparsity { out } => {
            let data = forecast_data(&settings)?;
            let points = sparsity_sweep(&settings.model, &settings.train, &data)?;
            write_table(&sparsity_table(&points), &out, &settings)
        }
        Command::GradCheck { scope } => grad_check(&scope),
        Command::Cost(args) => cost(&settings, &args),
        Command::EmitPlots(args) => emit_cmd(&settings, &args),
        Command::GridSearch { out } => {
            let data = forecast_data(&settings)?;
            let result = grid_search(&settings.model, &settings.train, &data)?;
            let best = result.best_cell();
            println!(
                "best: dim={} layers={} heads={} val_loss={}",
                best.dim,
                best.layers,
                best.heads,
                fmt_real(best.val_loss)
            );
            write_table(&grid_table(&result), &out, &settings)
        }
    }
}

fn write_table(table: &CsvTable, path: &Path, settings: &Settings) -> Result<()> {
    table
        .save(path, &settings.hash())
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn forecast_data(settings: &Settings) -> Result<ForecastData> {
    Ok(ForecastData::prepare(&settings.instances()?, &settings.manifest)?)
}

fn classify_data(settings: &Settings) -> Result<ClassifyData> {
    Ok(ClassifyData::prepare(&settings.instances()?, &settings.manifest)?)
}

fn gen(settings: &Settings, out: &Path) -> Result<()> {
    let insts = settings.instances()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_csv(out, &insts, Some(&settings.hash()))?;
    let manifest = PathBuf::from(format!("{}.manifest", out.display()));
    settings.manifest.save(&manifest)?;
    println!("wrote {} instances to {}", insts.len(), out.display());
    Ok(())
}

fn metrics_table(rows: &[(&str, f64)]) -> CsvTable {
    let mut t = CsvTable::new(["metric", "value"]);
    for (k, v) in rows {
        t.push(vec![k.to_string(), fmt_real(*v)]);
    }
    t
}

/// Test-split metrics of a trained model as `(name, value)` pairs.
fn test_metrics(settings: &Settings, model: &Model) -> Result<Vec<(&'static str, f64)>> {
    let bs = settings.train.batch_size;
    Ok(match model.config.task {
        Task::Forecast => {
            let data = forecast_data(settings)?;
            let norm = settings.train.untransformed.then_some(&data.normalizer);
            let m = eval_forecast(model, &data.test, bs, norm)?;
            vec![("mse", m.mse), ("mae", m.mae)]
        }
        Task::Classify => {
            let m = eval_classify(model, &classify_data(settings)?.test, bs)?;
            vec![
                ("auroc", m.auroc),
                ("auprc", m.auprc),
                ("accuracy", m.accuracy),
                ("precision", m.precision),
                ("recall", m.recall),
                ("f1", m.f1),
            ]
        }
    })
}

fn print_metrics(rows: &[(&str, f64)]) {
    for (k, v) in rows {
        println!("{k}: {v:.6}");
    }
}

fn train_cmd(settings: &Settings, args: &RunArgs) -> Result<()> {
    let tc = &settings.train;
    let outcome = match settings.model.task {
        Task::Forecast => {
            let data = forecast_data(settings)?;
            train(&settings.model, tc, &data.train[..], &data.val[..])?
        }
        Task::Classify => {
            let data = classify_data(settings)?;
            let cfg = ModelConfig {
                classes: data.classes,
                ..settings.model.clone()
            };
            train(&cfg, tc, &data.train[..], &data.val[..])?
        }
    };
    let base = args.out.join(&args.run_id);
    save_checkpoint(&outcome.model, &base)?;
    write_table(
        &loss_table(&outcome.curve),
        &args.out.join(format!("{}_loss.csv", args.run_id)),
        settings,
    )?;
    println!(
        "best epoch {} (validation loss {:.6})",
        outcome.best_epoch, outcome.best_val_loss
    );
    print_metrics(&test_metrics(settings, &outcome.model)?);
    println!("checkpoint {}", base.display());
    Ok(())
}

fn eval(settings: &Settings, checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let rows = test_metrics(settings, &model)?;
    print_metrics(&rows);
    match out {
        Some(p) => write_table(&metrics_table(&rows), p, settings),
        None => Ok(()),
    }
}

fn ablate_cmd(settings: &Settings, out: &Path, variants: &str) -> Result<()> {
    let kinds = variants
        .split(',')
        .map(|v| v.trim().parse::<EmbeddingKind>())
        .collect::<quite_core::Result<Vec<_>>>()?;
    let data = forecast_data(settings)?;
    let rows = ablate(&settings.model, &settings.train, &data, &kinds)?;
    for r in &rows {
        println!("{}: median mse {:.6}", r.variant, r.median_mse());
    }
    write_table(&summary_table(&rows), out, settings)
}

fn grad_check(scope: &str) -> Result<()> {
    let scope: GradScope = scope.parse()?;
    let entries = grad_check_suite(scope, &GradSuiteConfig::default())?;
    let mut failed = 0;
    for e in &entries {
        let status = if e.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} {} max_rel_err={:.3e} max_abs_err={:.3e}",
            e.name, e.report.max_rel_err, e.report.max_abs_err
        );
        failed += usize::from(!e.passed);
    }
    println!("{} checks, {failed} failed", entries.len());
    if failed > 0 {
        return Err(GradFailure(failed).into());
    }
    Ok(())
}

fn cost(settings: &Settings, args: &CostArgs) -> Result<()> {
    let ext = CostExtents {
        batch: args.batch,
        obs_per_variable: args.obs_per_variable,
        obs_per_patch: args.obs_per_patch,
        pred_len: args.pred_len,
    };
    let r = estimate_cost(&settings.model, &ext)?;
    println!("params: {}", r.params);
    println!("conventional_variable: {}", r.conventional_variable);
    println!("conventional_patch: {}", r.conventional_patch);
    println!("query_variable: {}", r.query_variable);
    println!("query_patch: {}", r.query_patch);
    println!("tokenization: {}", r.stages.tokenization);
    println!("aggregation: {}", r.stages.aggregation);
    println!("encoder: {}", r.stages.encoder);
    println!("decoder: {}", r.stages.decoder);
    println!("total: {}", r.stages.total());
    Ok(())
}

/// Reads a loss CSV written by `train`.
fn read_curve(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            anyhow::ensure!(f.len() == 3, "malformed loss row `{l}`");
            Ok(EpochRecord {
                epoch: f[0].parse()?,
                train_loss: f[1].parse()?,
                val_loss: f[2].parse()?,
            })
        })
        .collect()
}

fn emit_cmd(settings: &Settings, args: &RunArgs) -> Result<()> {
    let base = args.checkpoint.clone().unwrap_or_else(|| args.out.join(&args.run_id));
    let model = load_checkpoint(&base).with_context(|| format!("loading {}", base.display()))?;
    let curve_path = PathBuf::from(format!("{}_loss.csv", base.display()));
    let curve = if curve_path.exists() {
        read_curve(&curve_path)?
    } else {
        Vec::new()
    };
    let bs = settings.train.batch_size;
    let (trace, embeddings) = match model.config.task {
        Task::Forecast => {
            let data = forecast_data(settings)?;
            let norm = settings.train.untransformed.then_some(&data.normalizer);
            let histories: Vec<_> = data.test.iter().map(|s| s.history.clone()).collect();
            (
                predict_forecast(&model, &data.test, bs, norm)?,
                embedding_rows(&model, &histories, bs)?,
            )
        }
        Task::Classify => (Vec::new(), embedding_rows(&model, &classify_data(settings)?.test, bs)?),
    };
    let run = RunArtifacts {
        run_id: args.run_id.clone(),
        curve,
        trace,
        embeddings,
    };
    for p in emit_plots(&args.out, &run, &settings.hash())? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
