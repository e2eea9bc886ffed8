//! Self-contained invariant suite behind `spectralflow check`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::{h1_gap, Activation, MollifierTable};
use crate::error::Result;
use crate::field::Ensemble;
use crate::functionals::{random_direction, FieldSample, QuadratureSet};
use crate::geometry::{exp_map, geodesic_distance, wasserstein2, Particle, TangentVector};
use crate::potentials::PotentialSpec;
use crate::reference::{assemble_fd, ground_eigenpair, richardson};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantity against its threshold.
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn() -> Result<(bool, String)>;

pub const CHECKS: [(&str, CheckFn); 7] = [
    ("activation derivatives", activation_derivatives),
    ("activation H1 convergence", activation_convergence),
    ("potential gradients vs finite differences", gradients_vs_fd),
    ("velocity orthogonality", orthogonality),
    ("constraint non-degeneracy", nondegeneracy),
    ("W2 assignment oracle", w2_oracle),
    ("FD eigenvalue order", fd_order),
];

/// Runs every check; an error inside a check counts as a failure.
pub fn run_all() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckOutcome { name, passed, detail, seconds: t.elapsed().as_secs_f64() }
        })
        .collect()
}

pub fn format_table(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for o in outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        s.push_str(&format!("{tag}  {:<width$}  {:>7.2}s  {}\n", o.name, o.seconds, o.detail));
    }
    s
}

fn random_ensemble(rng: &mut ChaCha8Rng, m: usize, d: usize, tau: f64) -> Result<Ensemble> {
    let ps = (0..m)
        .map(|_| Particle { a: rng.random_range(-2.0..2.0), w: random_direction(d, rng), b: rng.random_range(-1.2..0.2) })
        .collect();
    Ensemble::new(ps, tau)
}

fn activation_derivatives() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for tau in [5.0, 20.0, 80.0] {
        let act = Activation::shared(tau)?;
        let r = act.support_radius();
        let scale = tau.max(1.0);
        for k in 0..=2000 {
            let y = -r + 2.0 * r * k as f64 / 2000.0;
            let e = act.eval(y);
            let fd1 = (act.value(y + h) - act.value(y - h)) / (2.0 * h);
            let fd2 = (act.eval(y + h).d1 - act.eval(y - h).d1) / (2.0 * h);
            worst = worst.max((e.d1 - fd1).abs()).max((e.d2 - fd2).abs() / scale);
        }
    }
    Ok((worst <= 1e-6, format!("max derivative mismatch {worst:.2e} (limit 1e-6)")))
}

fn activation_convergence() -> Result<(bool, String)> {
    let table = MollifierTable::shared();
    let pts: Vec<(f64, f64)> = (2..=8)
        .map(|k| {
            let tau = f64::powi(2.0, k);
            h1_gap(tau, 200_000, table).map(|g| (tau.ln(), g.ln()))
        })
        .collect::<Result<_>>()?;
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    Ok((slope <= -0.4, format!("log-log slope {slope:.3} (limit -0.4)")))
}

/// Finite-difference gradient on the manifold: `a` and `b` directly, `w`
/// along great circles through an orthonormal basis of the tangent sphere.
pub fn fd_tangent_gradient(p: &Particle, h: f64, f: impl Fn(&Particle) -> Result<f64>) -> Result<TangentVector> {
    let d = p.w.len();
    let shift = |da: f64, db: f64| Particle { a: p.a + da, w: p.w.clone(), b: p.b + db };
    let da = (f(&shift(h, 0.0))? - f(&shift(-h, 0.0))?) / (2.0 * h);
    let db = (f(&shift(0.0, h))? - f(&shift(0.0, -h))?) / (2.0 * h);
    let mut dw = vec![0.0; d];
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        let c = p.w[k];
        e.iter_mut().zip(&p.w).for_each(|(e, w)| *e -= c * w);
        let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-8 {
            continue;
        }
        e.iter_mut().for_each(|x| *x /= n);
        let t = TangentVector { da: 0.0, dw: e, db: 0.0 };
        // derivative along the projected axis P e_k is the k-th component
        dw[k] = n * (f(&exp_map(p, &t, h))? - f(&exp_map(p, &t, -h))?) / (2.0 * h);
    }
    Ok(TangentVector { da, dw, db })
}

fn relative_error(a: &TangentVector, b: &TangentVector) -> f64 {
    let diff = a.add_scaled(-1.0, b).norm_sq().sqrt();
    diff / b.norm_sq().sqrt().max(1e-300)
}

fn gradients_vs_fd() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q = QuadratureSet::tensor_grid(2, 64)?;
    let u = random_ensemble(&mut rng, 20, 2, 20.0)?;
    let w = PotentialSpec::Cos1d(100.0);
    let s = FieldSample::of_ensemble(&u, &q, &w)?;
    let act = Activation::shared(20.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = Particle { a: rng.random_range(-2.0..2.0), w: random_direction(2, &mut rng), b: rng.random_range(-1.0..0.0) };
        let gv = s.grad_v(&p, &act);
        let gc = s.grad_c(&p, &act)?;
        let fv = fd_tangent_gradient(&p, 1e-5, |x| Ok(s.potential_v(x, &act)))?;
        let fc = fd_tangent_gradient(&p, 1e-5, |x| s.potential_c(x, &act))?;
        worst = worst.max(relative_error(&fv, &gv)).max(relative_error(&fc, &gc));
    }
    Ok((worst <= 1e-5, format!("max relative error {worst:.2e} over 50 particles (limit 1e-5)")))
}

fn orthogonality() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = QuadratureSet::tensor_grid(2, 32)?;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let u = random_ensemble(&mut rng, 16, 2, 20.0)?;
        let s = FieldSample::of_ensemble(&u, &q, &PotentialSpec::CosDiag(100.0))?;
        let g = s.particle_gradients(&u, u.field().activation())?;
        let v = g.velocity()?;
        let scale = v.local_slope * g.constraint_gradient_norm_sq().sqrt();
        worst = worst.max(v.inner(&g.c).abs() / scale.max(1e-300));
    }
    Ok((worst <= 1e-10, format!("max |<v, grad C>| / norms {worst:.2e} (limit 1e-10)")))
}

fn nondegeneracy() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let q = QuadratureSet::tensor_grid(2, 32)?;
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let mut u = random_ensemble(&mut rng, 16, 2, 20.0)?;
        let n = FieldSample::of_ensemble(&u, &q, &PotentialSpec::Zero)?.norm();
        u.scale_amplitudes(1.0 / n);
        let s = FieldSample::of_ensemble(&u, &q, &PotentialSpec::Zero)?;
        let g = s.particle_gradients(&u, u.field().activation())?;
        let a2 = u.particles().iter().map(|p| p.a * p.a).sum::<f64>() / u.len() as f64;
        worst = worst.min(g.constraint_gradient_norm_sq() * a2);
    }
    Ok((worst >= 1.0 - 1e-6, format!("min |grad C|^2 mean(a^2) {worst:.6} (limit 1 - 1e-6)")))
}

/// Brute-force W2 over all permutations (small `m` only).
pub fn w2_bruteforce(a: &[Particle], b: &[Particle]) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, a: &[Particle], b: &[Particle], best: &mut f64) {
        if k == perm.len() {
            let c: f64 = perm.iter().enumerate().map(|(i, &j)| geodesic_distance(&a[i], &b[j]).powi(2)).sum();
            *best = best.min(c);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, a, b, best);
            perm.swap(k, i);
        }
    }
    let mut best = f64::INFINITY;
    permute(0, &mut (0..a.len()).collect(), a, b, &mut best);
    (best / a.len() as f64).sqrt()
}

fn w2_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<Particle> {
        (0..4)
            .map(|_| Particle { a: rng.random_range(-2.0..2.0), w: random_direction(3, rng), b: rng.random_range(-2.0..2.0) })
            .collect()
    };
    let mut mismatches = 0;
    let mut axiom: f64 = 0.0;
    for _ in 0..100 {
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let ab = wasserstein2(&a, &b)?;
        if ab != w2_bruteforce(&a, &b) {
            mismatches += 1;
        }
        let (ba, bc, ac) = (wasserstein2(&b, &a)?, wasserstein2(&b, &c)?, wasserstein2(&a, &c)?);
        axiom = axiom.max((ab - ba).abs()).max(ac - ab - bc).max(wasserstein2(&a, &a)?);
    }
    Ok((mismatches == 0 && axiom <= 1e-10, format!("{mismatches} mismatches in 100 pairs, axiom defect {axiom:.1e}")))
}

fn fd_order() -> Result<(bool, String)> {
    let w = PotentialSpec::Cos1d(100.0);
    let lambdas: Vec<f64> =
        [64, 128, 256].iter().map(|&n| ground_eigenpair(&assemble_fd(n, &w)?, 1e-8).map(|e| e.lambda)).collect::<Result<_>>()?;
    let r = richardson(lambdas[0], lambdas[1], lambdas[2]);
    let mut exact: f64 = 0.0;
    for (spec, lambda) in [(PotentialSpec::Zero, 0.0), (PotentialSpec::Constant(3.5), 3.5)] {
        let e = ground_eigenpair(&assemble_fd(32, &spec)?, 1e-8)?;
        exact = exact.max((e.lambda - lambda).abs());
    }
    let ok = (1.7..=2.3).contains(&r.order) && exact <= 1e-8;
    Ok((ok, format!("order {:.3} (limit [1.7, 2.3]), trivial cases off by {exact:.1e}", r.order)))
}
