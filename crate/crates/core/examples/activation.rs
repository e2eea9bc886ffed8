//! The mollified hat activation: values near the kinks, and the `H^1` gap to
//! the exact hat shrinking like `tau^{-1/2}`.
//!
//!     cargo run --release --example activation

use spectralflow::activation::{h1_gap, hrelu, Activation, MollifierTable};

fn main() -> spectralflow::Result<()> {
    let act = Activation::shared(20.0)?;
    println!("tau = 20, support radius {:.3}", act.support_radius());
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "y", "hat", "sigma_H", "d1", "d2");
    for y in [-1.05, -1.0, -0.5, -0.02, 0.0, 0.02, 0.5, 1.0, 1.05] {
        let e = act.eval(y);
        println!("{y:>6.2} {:>10.5} {:>10.5} {:>10.4} {:>10.3}", hrelu(y), e.value, e.d1, e.d2);
    }

    let table = MollifierTable::shared();
    println!("\n{:>6} {:>12}", "tau", "H1 gap");
    let mut prev: Option<f64> = None;
    for k in 2..=8 {
        let tau = f64::powi(2.0, k);
        let g = h1_gap(tau, 100_000, table)?;
        match prev {
            Some(p) => println!("{tau:>6} {g:>12.4e}   local slope {:.3}", (g / p).log2()),
            None => println!("{tau:>6} {g:>12.4e}"),
        }
        prev = Some(g);
    }
    Ok(())
}
