//! A small deterministic flow driven to a stationary point: the local slope
//! falls to round-off and the multiplier `sigma_mu` meets the energy.
//!
//!     cargo run --release --example stationarity

use spectralflow::flow::{run_flow, FlowConfig, Integrator, Quadrature};
use spectralflow::potentials::PotentialSpec;

fn main() -> spectralflow::Result<()> {
    let mut cfg = FlowConfig::new(1, PotentialSpec::Cos1d(10.0));
    cfg.integrator = Integrator::Lagrangian;
    cfg.m = 3;
    cfg.eta = Some(0.005);
    cfg.steps = 20_000;
    cfg.training = Quadrature::Grid(64);
    cfg.normalization = Quadrature::Grid(64);
    cfg.eval_grid = 64;
    cfg.eval_every = 2_000;
    cfg.probe_count = 512;
    let record = run_flow(&cfg, None)?;
    println!("{:>6} {:>12} {:>12} {:>10}", "step", "energy", "sigma_mu", "slope");
    for r in &record.rows {
        println!("{:>6} {:>12.8} {:>12.8} {:>10.2e}", r.step, r.energy, r.sigma_mu, r.local_slope);
    }
    let last = record.final_row();
    println!("|sigma_mu - E| = {:.2e}", (last.sigma_mu - last.energy).abs());
    if let Some(s) = record.stationarity {
        // positive values mean a direction in parameter space still lowers the energy
        println!("max over probes of |V - sigma C| = {s:.3e}");
    }
    for p in record.ensemble.particles() {
        println!("particle a = {:+.4}  w = {:+.0}  b = {:+.4}", p.a, p.w[0], p.b);
    }
    Ok(())
}
