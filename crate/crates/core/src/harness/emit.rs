use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{fmt_real, ImtsInstance};
use crate::embed::EmbeddingLevel;
use crate::error::Result;
use crate::model::Model;

use super::train::{EpochRecord, ForecastRecord};

/// A CSV table: `# config-hash:` line, header row, data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        CsvTable {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# config-hash: {config_hash}");
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.render(config_hash))?;
        Ok(())
    }
}

/// One embedding token: `m` is `None` at variable level.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub instance: String,
    pub variable: usize,
    pub patch: Option<usize>,
    pub values: Vec<f64>,
}

/// Everything a run can hand to [`emit_plots`].
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub run_id: String,
    pub curve: Vec<EpochRecord>,
    pub trace: Vec<ForecastRecord>,
    pub embeddings: Vec<EmbeddingRow>,
}

pub fn loss_table(curve: &[EpochRecord]) -> CsvTable {
    let mut t = CsvTable::new(["epoch", "train_loss", "val_loss"]);
    for r in curve {
        t.push(vec![r.epoch.to_string(), fmt_real(r.train_loss), fmt_real(r.val_loss)]);
    }
    t
}

pub fn trace_table(trace: &[ForecastRecord]) -> CsvTable {
    let mut t = CsvTable::new(["instance_id", "variable", "timestamp", "truth", "prediction"]);
    for r in trace {
        t.push(vec![
            r.instance.clone(),
            r.variable.to_string(),
            fmt_real(r.timestamp),
            fmt_real(r.truth),
            fmt_real(r.prediction),
        ]);
    }
    t
}

pub fn embedding_table(rows: &[EmbeddingRow]) -> CsvTable {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let patched = rows.iter().any(|r| r.patch.is_some());
    let mut header = vec!["instance_id".to_string(), "n".to_string()];
    if patched {
        header.push("m".into());
    }
    header.extend((0..dim).map(|k| format!("e{k}")));
    let mut t = CsvTable::new(header);
    for r in rows {
        let mut row = vec![r.instance.clone(), r.variable.to_string()];
        if patched {
            row.push(r.patch.map_or_else(String::new, |m| m.to_string()));
        }
        row.extend(r.values.iter().map(|&v| fmt_real(v)));
        t.push(row);
    }
    t
}

/// Embedding vectors for each instance, `[N × D]` at variable level and
/// `[M × N × D]` at patch level, one row per token.
pub fn embedding_rows(model: &Model, instances: &[ImtsInstance], batch_size: usize) -> Result<Vec<EmbeddingRow>> {
    let mut out = Vec::new();
    for chunk in instances.chunks(batch_size.max(1)) {
        let refs: Vec<&ImtsInstance> = chunk.iter().collect();
        let emb = model.embed(&model.observation_input(&refs)?)?;
        let (m, n, d) = (emb.patches(), emb.variables(), emb.dim());
        let values = emb.embeddings.to_vec();
        for (b, inst) in chunk.iter().enumerate() {
            for mi in 0..m {
                for ni in 0..n {
                    let start = ((b * m + mi) * n + ni) * d;
                    out.push(EmbeddingRow {
                        instance: inst.id.clone(),
                        variable: ni,
                        patch: (emb.level == EmbeddingLevel::Patch).then_some(mi),
                        values: values[start..start + d].to_vec(),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Writes `<run_id>_loss.csv` always, and `<run_id>_trace.csv` /
/// `<run_id>_embeddings.csv` when the run has them. Returns the paths written.
pub fn emit_plots(dir: &Path, run: &RunArtifacts, config_hash: &str) -> Result<Vec<PathBuf>> {
    let mut tables = vec![("loss", loss_table(&run.curve))];
    if !run.trace.is_empty() {
        tables.push(("trace", trace_table(&run.trace)));
    }
    if !run.embeddings.is_empty() {
        tables.push(("embeddings", embedding_table(&run.embeddings)));
    }
    let mut paths = Vec::new();
    for (kind, table) in tables {
        let path = dir.join(format!("{}_{kind}.csv", run.run_id));
        table.save(&path, config_hash)?;
        paths.push(path);
    }
    Ok(paths)
}
