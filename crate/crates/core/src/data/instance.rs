use crate::error::{Error, Result};

/// One observed `(timestamp, value)` pair. Every stored observation is real;
/// masks only appear once instances are padded into batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub timestamp: f64,
    pub value: f64,
}

/// An irregular multivariate time series: `N` variables, each with its own
/// strictly increasing observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct ImtsInstance {
    pub id: String,
    pub variables: Vec<Vec<Observation>>,
    pub label: Option<usize>,
}

impl ImtsInstance {
    pub fn new(id: impl Into<String>, num_variables: usize) -> Self {
        ImtsInstance {
            id: id.into(),
            variables: vec![Vec::new(); num_variables],
            label: None,
        }
    }

    /// Builds an instance from unordered `(variable, timestamp, value)` rows.
    pub fn from_rows(
        id: impl Into<String>,
        num_variables: usize,
        rows: impl IntoIterator<Item = (usize, f64, f64)>,
    ) -> Result<Self> {
        let mut inst = ImtsInstance::new(id, num_variables);
        for (var, timestamp, value) in rows {
            if var >= num_variables {
                return Err(Error::Config(format!(
                    "variable {var} out of range for {num_variables} variables"
                )));
            }
            inst.variables[var].push(Observation { timestamp, value });
        }
        inst.sort_and_validate()?;
        Ok(inst)
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_observations(&self) -> usize {
        self.variables.iter().map(Vec::len).sum()
    }

    /// Sorts every variable by time and rejects duplicate or non-finite entries.
    pub fn sort_and_validate(&mut self) -> Result<()> {
        for (n, obs) in self.variables.iter_mut().enumerate() {
            if let Some(bad) = obs
                .iter()
                .find(|o| !o.timestamp.is_finite() || !o.value.is_finite() || o.timestamp < 0.0)
            {
                return Err(Error::Config(format!(
                    "instance `{}`, variable {n}: invalid observation ({}, {})",
                    self.id, bad.timestamp, bad.value
                )));
            }
            obs.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            if let Some(w) = obs.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
                return Err(Error::DuplicateObservation {
                    instance: self.id.clone(),
                    variable: n,
                    timestamp: w[0].timestamp,
                });
            }
        }
        Ok(())
    }

    /// Latest timestamp over all variables, if any.
    pub fn last_timestamp(&self) -> Option<f64> {
        self.variables
            .iter()
            .filter_map(|v| v.last().map(|o| o.timestamp))
            .reduce(f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_sorted_per_variable() {
        let inst = ImtsInstance::from_rows("a", 1, [(0, 0.3, 1.0), (0, 0.1, 2.0)]).unwrap();
        let times: Vec<f64> = inst.variables[0].iter().map(|o| o.timestamp).collect();
        assert_eq!(times, vec![0.1, 0.3]);
    }

    #[test]
    fn duplicates_are_rejected() {
        let err = ImtsInstance::from_rows("a", 2, [(1, 0.5, 1.0), (1, 0.5, 2.0)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateObservation { variable: 1, .. }));
        // same timestamp on different variables is fine
        assert!(ImtsInstance::from_rows("a", 2, [(0, 0.5, 1.0), (1, 0.5, 2.0)]).is_ok());
    }
}
