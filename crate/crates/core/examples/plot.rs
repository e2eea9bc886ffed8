//! Writes a run CSV and renders the L2 error on a log scale and the Rayleigh
//! quotient against the reference eigenvalue.
//!
//!     cargo run --release --example plot [out_dir]

use std::fs;
use std::path::PathBuf;

use spectralflow::flow::{run_flow, FlowConfig, Integrator, Parametrization};
use spectralflow::plot::{render_svg, PlotOptions, Table};
use spectralflow::potentials::PotentialSpec;
use spectralflow::reference::ReferenceSolution;

fn main() -> spectralflow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "plot_out".into()));
    fs::create_dir_all(&out)?;
    let potential = PotentialSpec::ExpDiag(100.0);
    let reference = ReferenceSolution::solve(&potential, 128, 1e-8)?;
    let mut cfg = FlowConfig::new(2, potential);
    cfg.integrator = Integrator::Lagrangian;
    cfg.parametrization = Parametrization::Network;
    cfg.eta = Some(5e-4);
    cfg.steps = 5_000;
    cfg.eval_every = 50;
    cfg.probe_count = 0;
    let record = run_flow(&cfg, Some(&reference))?;
    let csv = record.to_csv();
    fs::write(out.join("run.csv"), &csv)?;

    let table = Table::parse("exp_diag:100", &csv)?;
    let l2 = PlotOptions { metric: "l2_error".into(), log_y: true, ..PlotOptions::default() };
    fs::write(out.join("l2_error.svg"), render_svg(std::slice::from_ref(&table), &l2)?)?;
    let rq = PlotOptions { reference: Some(reference.lambda), ..PlotOptions::default() };
    fs::write(out.join("rayleigh.svg"), render_svg(&[table], &rq)?)?;
    println!("final rayleigh {:.4} (reference {:.4}); wrote {}", record.final_row().rayleigh, reference.lambda, out.display());
    Ok(())
}
