//! `W = 100 cos(2 pi x1)` in eight dimensions. The potential depends on one
//! coordinate only, so the two-dimensional reference applies unchanged.
//! Takes about a minute and a half.
//!
//!     cargo run --release --example high_dim [steps]

use spectralflow::flow::{run_flow, FlowConfig, Integrator, Parametrization};
use spectralflow::potentials::PotentialSpec;
use spectralflow::reference::ReferenceSolution;

fn main() -> spectralflow::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().expect("steps")).unwrap_or(20_000);
    let potential = PotentialSpec::Cos1d(100.0);
    let reference = ReferenceSolution::solve(&potential, 128, 1e-8)?;

    let mut cfg = FlowConfig::new(8, potential);
    cfg.integrator = Integrator::Lagrangian;
    cfg.parametrization = Parametrization::Network;
    cfg.batch = 1000;
    cfg.eta = Some(5e-4);
    cfg.steps = steps;
    cfg.eval_every = steps.div_ceil(10).max(1);
    cfg.probe_count = 0;
    let record = run_flow(&cfg, Some(&reference))?;

    println!("{:>6} {:>16} {:>10} {:>8}", "step", "energy (+-SE)", "rayleigh", "l2");
    for r in &record.rows {
        println!("{:>6} {:>9.3} +- {:<5.3} {:>10.4} {:>8.4}", r.step, r.energy, r.energy_stderr, r.rayleigh, r.l2_error);
    }
    let last = record.final_row();
    println!(
        "reference {:.4}, relative error {:.2}%",
        reference.lambda,
        100.0 * ((last.rayleigh - reference.lambda) / reference.lambda).abs()
    );
    Ok(())
}
