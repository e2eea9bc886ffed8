//! Subcommand bodies; `main.rs` only parses arguments and prints.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::flow::{run_flow, RunRecord};
use crate::plot::{render_svg, PlotOptions, Table};
use crate::potentials::PotentialSpec;
use crate::reference::{richardson, ReferenceSolution, Richardson, MIN_GRID};
use crate::sweep::{run_sweep, SweepSummary};

pub const RUN_CSV: &str = "run.csv";
pub const RUN_JSON: &str = "run.json";
pub const CHECKPOINT: &str = "final.ckpt";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Reads a config file, applies environment overrides, then the seed flag.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    cfg.apply_env(std::env::vars())?;
    if let Some(s) = seed {
        cfg.flow.seed = s;
    }
    Ok(cfg)
}

/// `--reference-file` wins over `[reference] file`; `solve = true` computes
/// one at `grid` when no file is given.
pub fn load_reference(cfg: &RunConfig, file: Option<&Path>) -> Result<Option<ReferenceSolution>> {
    if let Some(p) = file.or(cfg.reference.file.as_deref()) {
        let r = ReferenceSolution::read(p)?;
        if r.potential != cfg.flow.potential {
            return Err(Error::Config(format!(
                "reference {} is for potential {}, config uses {}",
                p.display(),
                r.potential,
                cfg.flow.potential
            )));
        }
        return Ok(Some(r));
    }
    if cfg.reference.solve {
        return ReferenceSolution::solve(&cfg.flow.potential, cfg.reference.grid, cfg.reference.tol).map(Some);
    }
    Ok(None)
}

pub fn output_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."))
}

fn sidecar_with_reference(record: &RunRecord, reference: Option<&ReferenceSolution>) -> serde_json::Value {
    let mut json = record.sidecar();
    if let (Some(r), Some(obj)) = (reference, json.as_object_mut()) {
        obj.insert("reference_lambda".into(), r.lambda.into());
        obj.insert("reference_grid".into(), r.intervals.into());
    }
    json
}

/// Runs one flow and writes `run.csv`, `run.json` and `final.ckpt` to `out`.
/// The record is returned even when the run stopped early.
pub fn cmd_run(cfg: &RunConfig, reference: Option<&ReferenceSolution>, out: &Path) -> Result<RunRecord> {
    fs::create_dir_all(out)?;
    let record = run_flow(&cfg.flow, reference)?;
    fs::write(out.join(RUN_CSV), record.to_csv())?;
    fs::write(out.join(RUN_JSON), serde_json::to_string_pretty(&sidecar_with_reference(&record, reference))?)?;
    if cfg.output.checkpoint {
        record.ensemble.write_checkpoint(out.join(CHECKPOINT))?;
    }
    Ok(record)
}

/// Runs seeds `seed..seed + runs`, writing `run_<i>.csv`/`.json` per run and
/// the summary CSV and JSON.
pub fn cmd_sweep(
    cfg: &RunConfig,
    runs: usize,
    reference: Option<&ReferenceSolution>,
    out: &Path,
    parallel: bool,
) -> Result<(Vec<RunRecord>, SweepSummary)> {
    fs::create_dir_all(out)?;
    let (records, summary) = run_sweep(&cfg.flow, runs, reference, parallel)?;
    for (i, r) in records.iter().enumerate() {
        fs::write(out.join(format!("run_{i:03}.csv")), r.to_csv())?;
        fs::write(
            out.join(format!("run_{i:03}.json")),
            serde_json::to_string_pretty(&sidecar_with_reference(r, reference))?,
        )?;
    }
    fs::write(out.join(SUMMARY_CSV), summary.to_csv())?;
    let json = serde_json::json!({
        "runs": summary.runs,
        "config_hash": summary.config_hash,
        "seeds": (0..runs).map(|i| cfg.flow.seed.wrapping_add(i as u64)).collect::<Vec<_>>(),
        "incomplete": summary.incomplete,
        "reference_lambda": reference.map(|r| r.lambda),
        "config": cfg.flow,
    });
    fs::write(out.join(SUMMARY_JSON), serde_json::to_string_pretty(&json)?)?;
    Ok((records, summary))
}

/// Solves at `intervals`, writes the solution, and when `intervals / 4` is
/// still a valid grid also solves at `N/4` and `N/2` for extrapolation.
pub fn cmd_reference(
    potential: &PotentialSpec,
    intervals: usize,
    tol: f64,
    out: &Path,
) -> Result<(ReferenceSolution, Option<Richardson>)> {
    let fine = ReferenceSolution::solve(potential, intervals, tol)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fine.write(out)?;
    let rich = if intervals.is_multiple_of(4) && intervals / 4 >= MIN_GRID {
        let coarse = ReferenceSolution::solve(potential, intervals / 4, tol)?;
        let mid = ReferenceSolution::solve(potential, intervals / 2, tol)?;
        Some(richardson(coarse.lambda, mid.lambda, fine.lambda))
    } else {
        None
    };
    Ok((fine, rich))
}

pub fn cmd_plot(csvs: &[PathBuf], out: &Path, opts: &PlotOptions) -> Result<()> {
    let tables = csvs.iter().map(|p| Table::read(p)).collect::<Result<Vec<_>>>()?;
    let svg = render_svg(&tables, opts)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, svg)?;
    Ok(())
}
