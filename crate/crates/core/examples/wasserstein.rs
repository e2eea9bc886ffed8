//! Exact `W2` between particle ensembles on `R x S^{d-1} x R`, checked
//! against brute force, and the distance travelled by a short flow.
//!
//!     cargo run --release --example wasserstein

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spectralflow::flow::{run_flow, FlowConfig, Integrator, Quadrature};
use spectralflow::functionals::random_direction;
use spectralflow::geometry::{geodesic_distance, wasserstein2, Particle};
use spectralflow::potentials::PotentialSpec;

fn brute_force(a: &[Particle], b: &[Particle], perm: &mut Vec<usize>, k: usize) -> f64 {
    if k == perm.len() {
        return perm.iter().enumerate().map(|(i, &j)| geodesic_distance(&a[i], &b[j]).powi(2)).sum();
    }
    let mut best = f64::INFINITY;
    for i in k..perm.len() {
        perm.swap(k, i);
        best = best.min(brute_force(a, b, perm, k + 1));
        perm.swap(k, i);
    }
    best
}

fn main() -> spectralflow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draw = |m: usize| -> Vec<Particle> {
        (0..m)
            .map(|_| Particle { a: rng.random_range(-2.0..2.0), w: random_direction(3, &mut rng), b: rng.random_range(-2.0..2.0) })
            .collect()
    };
    for m in [2, 4, 6] {
        let (a, b) = (draw(m), draw(m));
        let exact = wasserstein2(&a, &b)?;
        let brute = (brute_force(&a, &b, &mut (0..m).collect(), 0) / m as f64).sqrt();
        println!("m = {m}: assignment {exact:.12}  permutations {brute:.12}");
    }

    let mut cfg = FlowConfig::new(2, PotentialSpec::Cos1d(10.0));
    cfg.integrator = Integrator::Lagrangian;
    cfg.m = 50;
    cfg.training = Quadrature::Grid(32);
    cfg.eval_grid = 32;
    cfg.probe_count = 0;
    cfg.steps = 0;
    let start = run_flow(&cfg, None)?.ensemble;
    println!("\nW2 from the initial ensemble along a flow (m = 50):");
    for steps in [10, 100, 1000] {
        cfg.steps = steps;
        let end = run_flow(&cfg, None)?.ensemble;
        println!("  after {steps:>4} steps: {:.5}", wasserstein2(start.particles(), end.particles())?);
    }
    Ok(())
}
