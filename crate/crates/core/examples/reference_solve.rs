//! Finite-difference ground state of `-Laplacian + 100 cos(2 pi x1)` on the
//! unit square at three grid levels, with Richardson extrapolation.
//!
//!     cargo run --release --example reference_solve

use std::time::Instant;

use spectralflow::potentials::PotentialSpec;
use spectralflow::reference::{richardson, ReferenceSolution, DEFAULT_TOL};

fn main() -> spectralflow::Result<()> {
    let potential: PotentialSpec = "cos1d:100".parse()?;
    let mut lambdas = Vec::new();
    for n in [64, 128, 256] {
        let start = Instant::now();
        let sol = ReferenceSolution::solve(&potential, n, DEFAULT_TOL)?;
        println!(
            "N = {n:4}  lambda = {:.10}  residual = {:.1e}  ({:.2?})",
            sol.lambda,
            sol.residual,
            start.elapsed()
        );
        lambdas.push(sol.lambda);
    }
    let r = richardson(lambdas[0], lambdas[1], lambdas[2]);
    println!("observed order p = {:.4}", r.order);
    println!("extrapolated lambda = {:.10}", r.extrapolated);
    Ok(())
}
