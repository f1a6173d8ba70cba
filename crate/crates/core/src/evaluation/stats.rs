use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::codeswitch::CodeSwitchLabel;
use super::metrics::MetricName;
use crate::error::{QuistError, Result};

/// Arithmetic mean and sample standard deviation (n - 1 denominator; zero for
/// a single run).
pub fn aggregate_runs(per_run: &[f64]) -> Result<(f64, f64)> {
    if per_run.is_empty() {
        return Err(QuistError::Argument("cannot aggregate zero runs".into()));
    }
    let n = per_run.len() as f64;
    let mean = per_run.iter().sum::<f64>() / n;
    if per_run.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = per_run.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub language: String,
    pub metrics: BTreeMap<MetricName, MetricSummary>,
    pub per_run: BTreeMap<MetricName, Vec<f64>>,
    #[serde(default)]
    pub code_switch: BTreeMap<CodeSwitchLabel, usize>,
    /// Free-form notes such as the METEOR configuration used.
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn from_runs(language: &str, per_run: BTreeMap<MetricName, Vec<f64>>) -> Result<Self> {
        let metrics = per_run
            .iter()
            .map(|(m, v)| {
                let (mean, std) = aggregate_runs(v)?;
                Ok((*m, MetricSummary { mean, std, n_runs: v.len() }))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            language: language.to_string(),
            metrics,
            per_run,
            code_switch: BTreeMap::new(),
            notes: BTreeMap::new(),
        })
    }
}
