//! Long-format CSV: `instance_id,variable_id,timestamp,value[,label]`.
//!
//! Lines starting with `#` are comments. Reals are written with 17
//! significant digits so a save/load cycle is bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::instance::{ImtsInstance, Observation};
use crate::error::{Error, Result};

pub const HEADER: &str = "instance_id,variable_id,timestamp,value";

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<ImtsInstance>> {
    read_csv(BufReader::new(File::open(path)?))
}

pub fn read_csv<R: BufRead>(reader: R) -> Result<Vec<ImtsInstance>> {
    struct Pending {
        rows: Vec<(usize, Observation)>,
        label: Option<usize>,
        label_line: usize,
    }
    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    let mut has_label = None;
    let mut num_variables = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(labeled) = has_label else {
            has_label = Some(match line.trim() {
                l if l == HEADER => false,
                l if l == format!("{HEADER},label") => true,
                _ => {
                    return Err(Error::Csv {
                        line: lineno,
                        msg: format!("expected header `{HEADER}[,label]`"),
                    })
                }
            });
            continue;
        };
        let expected = if labeled { 5 } else { 4 };
        if fields.len() != expected {
            return Err(Error::Csv {
                line: lineno,
                msg: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::Csv {
            line: lineno,
            msg: format!("malformed {what}"),
        };
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(bad("instance_id"));
        }
        let var: usize = fields[1].parse().map_err(|_| bad("variable_id"))?;
        let timestamp: f64 = fields[2].parse().map_err(|_| bad("timestamp"))?;
        let value: f64 = fields[3].parse().map_err(|_| bad("value"))?;
        if !timestamp.is_finite() || timestamp < 0.0 || !value.is_finite() {
            return Err(bad("timestamp/value (must be finite, timestamp nonnegative)"));
        }
        let label = if labeled && !fields[4].is_empty() {
            Some(fields[4].parse::<usize>().map_err(|_| bad("label"))?)
        } else {
            None
        };
        num_variables = num_variables.max(var + 1);
        let entry = pending.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Pending {
                rows: Vec::new(),
                label,
                label_line: lineno,
            }
        });
        if entry.label != label {
            return Err(Error::InconsistentLabel(format!(
                "{id} (lines {} and {lineno})",
                entry.label_line
            )));
        }
        entry.rows.push((var, Observation { timestamp, value }));
    }

    order
        .into_iter()
        .map(|id| {
            let p = pending.remove(&id).expect("recorded id");
            let mut inst = ImtsInstance::new(id, num_variables);
            inst.label = p.label;
            for (var, obs) in p.rows {
                inst.variables[var].push(obs);
            }
            inst.sort_and_validate()?;
            Ok(inst)
        })
        .collect()
}

pub fn save_csv(path: impl AsRef<Path>, instances: &[ImtsInstance], config_hash: Option<&str>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write_csv(&mut f, instances, config_hash)?;
    f.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(w: &mut W, instances: &[ImtsInstance], config_hash: Option<&str>) -> Result<()> {
    if let Some(h) = config_hash {
        writeln!(w, "# config-hash: {h}")?;
    }
    let labeled = instances.iter().any(|i| i.label.is_some());
    if labeled {
        writeln!(w, "{HEADER},label")?;
    } else {
        writeln!(w, "{HEADER}")?;
    }
    for inst in instances {
        for (n, obs) in inst.variables.iter().enumerate() {
            for o in obs {
                write!(w, "{},{n},{},{}", inst.id, fmt_real(o.timestamp), fmt_real(o.value))?;
                if labeled {
                    match inst.label {
                        Some(l) => write!(w, ",{l}")?,
                        None => write!(w, ",")?,
                    }
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}
