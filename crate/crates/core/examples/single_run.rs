//! One flow on `W = 100 cos(2 pi x1)` in two dimensions, compared with the
//! finite-difference ground state.
//!
//!     cargo run --release --example single_run [integrator] [steps]
//!
//! `integrator` is `lagrangian` (default) or `sgd_renorm`.

use spectralflow::flow::{run_flow, FlowConfig, Integrator, Parametrization};
use spectralflow::potentials::PotentialSpec;
use spectralflow::reference::ReferenceSolution;

fn main() -> spectralflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let integrator: Integrator = args.next().as_deref().unwrap_or("lagrangian").parse()?;
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(20_000);

    let potential = PotentialSpec::Cos1d(100.0);
    let reference = ReferenceSolution::solve(&potential, 128, 1e-8)?;

    let mut cfg = FlowConfig::new(2, potential);
    cfg.integrator = integrator;
    cfg.steps = steps;
    cfg.eval_every = steps.div_ceil(20).max(1);
    if integrator == Integrator::Lagrangian {
        // separate amplitude and position time scales
        cfg.parametrization = Parametrization::Network;
        cfg.eta = Some(5e-4);
    }
    let record = run_flow(&cfg, Some(&reference))?;

    println!("{:>6} {:>10} {:>10} {:>10} {:>9} {:>8}", "step", "energy", "rayleigh", "sigma_mu", "slope", "l2");
    for r in &record.rows {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4} {:>9.2e} {:>8.4}",
            r.step, r.energy, r.rayleigh, r.sigma_mu, r.local_slope, r.l2_error
        );
    }
    let last = record.final_row();
    println!(
        "\nreference lambda {:.4}; relative error {:.2}%",
        reference.lambda,
        100.0 * ((last.rayleigh - reference.lambda) / reference.lambda).abs()
    );
    if let Some(s) = record.stationarity {
        println!("stationarity residual max |V - sigma C| over probes: {s:.3e}");
    }
    Ok(())
}
