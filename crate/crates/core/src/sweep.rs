//! Independent runs of one configuration and their per-step statistics.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{run_flow, EvalRow, FlowConfig, RunRecord};
use crate::reference::ReferenceSolution;

/// Columns aggregated by a sweep, in CSV order.
pub const METRICS: [&str; 9] =
    ["time_s", "energy", "rayleigh", "sigma_mu", "constraint", "local_slope", "l2_error", "r_t", "wall_ms"];

fn metric(row: &EvalRow, k: usize) -> f64 {
    [
        row.time_s,
        row.energy,
        row.rayleigh,
        row.sigma_mu,
        row.constraint,
        row.local_slope,
        row.l2_error,
        row.r_t,
        row.wall_ms,
    ][k]
}

/// Hex SHA-256 of the configuration (seed included).
pub fn config_hash(cfg: &FlowConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub runs: usize,
    pub config_hash: String,
    pub steps: Vec<usize>,
    /// `mean[k][i]` is the mean of `METRICS[k]` at `steps[i]`.
    pub mean: Vec<Vec<f64>>,
    /// Population variance (divides by `runs`).
    pub var: Vec<Vec<f64>>,
    /// Runs that stopped early; the summary covers the rows all runs share.
    pub incomplete: Vec<usize>,
}

impl SweepSummary {
    pub fn column(&self, name: &str) -> Option<(&[f64], &[f64])> {
        let k = METRICS.iter().position(|m| *m == name)?;
        Some((&self.mean[k], &self.var[k]))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step");
        for m in METRICS {
            s.push_str(&format!(",{m}_mean,{m}_var"));
        }
        s.push('\n');
        for (i, step) in self.steps.iter().enumerate() {
            s.push_str(&step.to_string());
            for k in 0..METRICS.len() {
                s.push_str(&format!(",{:?},{:?}", self.mean[k][i], self.var[k][i]));
            }
            s.push('\n');
        }
        s
    }
}

/// Per-step mean and population variance over `records`.
pub fn summarize(records: &[RunRecord]) -> Result<SweepSummary> {
    let first = records.first().ok_or_else(|| Error::Config("a sweep needs at least one run".into()))?;
    let len = records.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let steps: Vec<usize> = first.rows[..len].iter().map(|r| r.step).collect();
    if records.iter().any(|r| r.rows[..len].iter().zip(&steps).any(|(row, s)| row.step != *s)) {
        return Err(Error::Config("runs were logged at different steps".into()));
    }
    let n = records.len() as f64;
    let mut mean = vec![vec![0.0; len]; METRICS.len()];
    let mut var = vec![vec![0.0; len]; METRICS.len()];
    for k in 0..METRICS.len() {
        for i in 0..len {
            let mu = records.iter().map(|r| metric(&r.rows[i], k)).sum::<f64>() / n;
            let v = records.iter().map(|r| (metric(&r.rows[i], k) - mu).powi(2)).sum::<f64>() / n;
            mean[k][i] = mu;
            var[k][i] = v;
        }
    }
    Ok(SweepSummary {
        runs: records.len(),
        config_hash: config_hash(&first.config),
        steps,
        mean,
        var,
        incomplete: records.iter().enumerate().filter(|(_, r)| !r.is_complete()).map(|(i, _)| i).collect(),
    })
}

/// Runs `cfg` with seeds `cfg.seed + i`, `i < runs`. Results come back in
/// seed order whether or not `parallel` is set.
pub fn run_sweep(
    cfg: &FlowConfig,
    runs: usize,
    reference: Option<&ReferenceSolution>,
    parallel: bool,
) -> Result<(Vec<RunRecord>, SweepSummary)> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let one = |i: usize| {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i as u64);
        run_flow(&c, reference)
    };
    let records: Result<Vec<RunRecord>> =
        if parallel { (0..runs).into_par_iter().map(one).collect() } else { (0..runs).map(one).collect() };
    let records = records?;
    let mut summary = summarize(&records)?;
    summary.config_hash = config_hash(cfg);
    Ok((records, summary))
}
