use super::instance::ImtsInstance;
use crate::error::{Error, Result};

/// A future `(variable, timestamp)` whose value is to be predicted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub variable: usize,
    pub timestamp: f64,
}

/// History strictly before `split_time`; every observation at or after it
/// becomes a query with its observed value as target.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSplit {
    pub history: ImtsInstance,
    pub queries: Vec<Query>,
    pub targets: Vec<f64>,
    pub split_time: f64,
}

impl ForecastSplit {
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }
}

pub fn split_forecast(inst: &ImtsInstance, split_time: f64) -> Result<ForecastSplit> {
    if !split_time.is_finite() || split_time <= 0.0 {
        return Err(Error::Config(format!(
            "split time must be positive and finite, got {split_time}"
        )));
    }
    let mut history = ImtsInstance::new(inst.id.clone(), inst.num_variables());
    history.label = inst.label;
    let mut queries = Vec::new();
    let mut targets = Vec::new();
    for (n, obs) in inst.variables.iter().enumerate() {
        for o in obs {
            if o.timestamp < split_time {
                history.variables[n].push(*o);
            } else {
                queries.push(Query {
                    variable: n,
                    timestamp: o.timestamp,
                });
                targets.push(o.value);
            }
        }
    }
    if history.num_observations() == 0 {
        return Err(Error::DegenerateSplit {
            instance: inst.id.clone(),
            split_time,
        });
    }
    Ok(ForecastSplit {
        history,
        queries,
        targets,
        split_time,
    })
}
