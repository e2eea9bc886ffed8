//! Eight seeds of the same configuration, run in parallel, with the per-step
//! mean and variance written as CSV and rendered to SVG.
//!
//!     cargo run --release --example sweep [out_dir]

use std::fs;
use std::path::PathBuf;

use spectralflow::flow::{FlowConfig, Integrator, Parametrization};
use spectralflow::plot::{render_svg, PlotOptions, Table};
use spectralflow::potentials::PotentialSpec;
use spectralflow::reference::ReferenceSolution;
use spectralflow::sweep::run_sweep;

fn main() -> spectralflow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sweep_out".into()));
    fs::create_dir_all(&out)?;

    let potential = PotentialSpec::CosDiag(100.0);
    let reference = ReferenceSolution::solve(&potential, 128, 1e-8)?;
    let mut cfg = FlowConfig::new(2, potential);
    cfg.integrator = Integrator::Lagrangian;
    cfg.parametrization = Parametrization::Network;
    cfg.eta = Some(5e-4);
    cfg.steps = 5_000;
    cfg.eval_every = 100;
    cfg.probe_count = 0;

    let (records, summary) = run_sweep(&cfg, 8, Some(&reference), true)?;
    for r in &records {
        let last = r.final_row();
        println!("seed {:>2}: rayleigh {:.4}  l2 {:.4}", r.config.seed, last.rayleigh, last.l2_error);
    }
    let csv = summary.to_csv();
    fs::write(out.join("summary.csv"), &csv)?;
    let (mean, var) = summary.column("rayleigh").expect("rayleigh");
    println!(
        "mean {:.4}, variance {:.3e}, reference {:.4}, hash {}",
        mean[mean.len() - 1],
        var[var.len() - 1],
        reference.lambda,
        &summary.config_hash[..12]
    );

    let table = Table::parse("cos_diag:100, 8 seeds", &csv)?;
    let opts = PlotOptions { reference: Some(reference.lambda), ..PlotOptions::default() };
    fs::write(out.join("rayleigh.svg"), render_svg(&[table], &opts)?)?;
    println!("wrote {}", out.display());
    Ok(())
}
