//! Energy, constraint, their potentials on parameter space, and the
//! constrained velocity field.
//!
//! Every `L^2(Omega)` integral is a weighted sum over a [`QuadratureSet`].
//! Quantities that depend on `u` are computed from a [`FieldSample`], which
//! evaluates `u`, `grad u` and `W` once per point and is then reused for all
//! particles of a step.
//!
//! Conventions, for `theta = (a, w, b)` and `z = w . x + b`:
//!
//! ```text
//! V(theta) = <grad u, grad Phi(theta)> + <W u, Phi(theta)>
//! C(theta) = <u, Phi(theta)> / ||u||
//! sigma_mu = sum_i grad V(theta_i) . grad C(theta_i) / sum_i |grad C(theta_i)|^2
//! v_i      = -(grad V(theta_i) - sigma_mu grad C(theta_i))
//! ```
//!
//! with all gradients projected on the tangent space of the particle.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::field::{Ensemble, TrialFunction};
use crate::geometry::{tangent_project, AmbientGradient, Particle, TangentVector};
use crate::potentials::PotentialSpec;

/// Largest dimension for which tensor-product grids are offered.
pub const MAX_GRID_DIM: usize = 3;

/// Work size (points x particles) above which evaluation fans out over threads.
const PARALLEL_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureKind {
    /// Uniform weights `1/n` on sampled or supplied points.
    MonteCarlo,
    /// Tensor trapezoid rule with `intervals` cells per axis.
    Grid { intervals: usize },
}

/// Points of `[0,1]^d` with positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSet {
    d: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    kind: QuadratureKind,
}

impl QuadratureSet {
    /// `n` uniform samples of the cube.
    pub fn monte_carlo<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::Domain("Monte-Carlo quadrature needs d >= 1 and n >= 1".into()));
        }
        let points = (0..n * d).map(|_| rng.random::<f64>()).collect();
        Ok(Self { d, points, weights: vec![1.0 / n as f64; n], kind: QuadratureKind::MonteCarlo })
    }

    /// Uniform weights on the given flat `n * d` point array.
    pub fn from_points(d: usize, points: Vec<f64>) -> Result<Self> {
        if d == 0 || points.is_empty() || !points.len().is_multiple_of(d) {
            return Err(Error::Domain("point array length must be a positive multiple of d".into()));
        }
        if points.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Domain("quadrature points must lie in [0,1]^d".into()));
        }
        let n = points.len() / d;
        Ok(Self { d, points, weights: vec![1.0 / n as f64; n], kind: QuadratureKind::MonteCarlo })
    }

    /// Tensor trapezoid rule on `(intervals + 1)^d` nodes, `d <= 3`.
    pub fn tensor_grid(d: usize, intervals: usize) -> Result<Self> {
        if d == 0 || d > MAX_GRID_DIM {
            return Err(Error::Domain(format!("tensor grids are available for 1 <= d <= {MAX_GRID_DIM}, got {d}")));
        }
        if intervals == 0 {
            return Err(Error::Domain("tensor grid needs at least one interval".into()));
        }
        let n1 = intervals + 1;
        let h = 1.0 / intervals as f64;
        let w1: Vec<f64> = (0..n1).map(|i| if i == 0 || i == intervals { 0.5 * h } else { h }).collect();
        let total = n1.pow(d as u32);
        let mut points = Vec::with_capacity(total * d);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            let start = points.len();
            for _ in 0..d {
                let i = rem % n1;
                rem /= n1;
                points.push(i as f64 * h);
                w *= w1[i];
            }
            // Axis 0 varies slowest, matching row-major (x1, x2, ...) order.
            points[start..].reverse();
            weights.push(w);
        }
        Ok(Self { d, points, weights, kind: QuadratureKind::Grid { intervals } })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    #[inline]
    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.d..(j + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted integral of `f`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

/// `u`, `grad u` and `W` tabulated on a quadrature set.
#[derive(Debug, Clone)]
pub struct FieldSample<'q> {
    q: &'q QuadratureSet,
    values: Vec<f64>,
    grads: Vec<f64>,
    potential: Vec<f64>,
    norm: f64,
}

impl<'q> FieldSample<'q> {
    pub fn new(u: &impl TrialFunction, q: &'q QuadratureSet, w: &PotentialSpec) -> Result<Self> {
        let d = q.dim();
        if u.dim() != d {
            return Err(Error::Domain(format!("function dimension {} does not match quadrature dimension {d}", u.dim())));
        }
        w.check_dimension(d)?;
        let eval_point = |x: &[f64]| {
            let mut g = vec![0.0; d];
            let v = u.value_grad(x, &mut g);
            (v, g)
        };
        let pairs: Vec<(f64, Vec<f64>)> = if q.len() * d * 64 >= PARALLEL_THRESHOLD {
            q.points.par_chunks_exact(d).map(eval_point).collect()
        } else {
            q.points().map(eval_point).collect()
        };
        let mut values = Vec::with_capacity(q.len());
        let mut grads = Vec::with_capacity(q.len() * d);
        for (v, g) in pairs {
            values.push(v);
            grads.extend(g);
        }
        let potential: Vec<f64> = q.points().map(|x| w.eval(x)).collect();
        let norm = values.iter().zip(&q.weights).map(|(v, wt)| wt * v * v).sum::<f64>().sqrt();
        Ok(Self { q, values, grads, potential, norm })
    }

    /// Sample of an ensemble through the shared mollifier table.
    pub fn of_ensemble(u: &Ensemble, q: &'q QuadratureSet, w: &PotentialSpec) -> Result<Self> {
        Self::new(&u.field(), q, w)
    }

    pub fn quadrature(&self) -> &'q QuadratureSet {
        self.q
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradient(&self, j: usize) -> &[f64] {
        let d = self.q.dim();
        &self.grads[j * d..(j + 1) * d]
    }

    /// Quadrature `L^2` norm of `u`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// `sum_j w_j (|grad u|^2 + W u^2)`.
    pub fn energy(&self) -> f64 {
        (0..self.q.len())
            .map(|j| {
                let g = self.gradient(j);
                let u = self.values[j];
                self.q.weights[j] * (g.iter().map(|x| x * x).sum::<f64>() + self.potential[j] * u * u)
            })
            .sum()
    }

    /// `||u|| - 1`.
    pub fn constraint(&self) -> f64 {
        self.norm - 1.0
    }

    /// `E(u) / ||u||^2`.
    pub fn rayleigh_quotient(&self) -> Result<f64> {
        self.nonzero_norm()?;
        Ok(self.energy() / (self.norm * self.norm))
    }

    fn nonzero_norm(&self) -> Result<f64> {
        if self.norm > 0.0 && self.norm.is_finite() {
            Ok(self.norm)
        } else {
            Err(Error::DegenerateMeasure)
        }
    }

    /// Energy potential `V(theta)`.
    pub fn potential_v(&self, p: &Particle, act: &Activation) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.q.len() {
            let x = self.q.point(j);
            let (s, d1) = act.value_d1(p.preactivation(x));
            if s == 0.0 && d1 == 0.0 {
                continue;
            }
            let gw: f64 = self.gradient(j).iter().zip(&p.w).map(|(g, w)| g * w).sum();
            acc += self.q.weights[j] * (gw * d1 + self.potential[j] * self.values[j] * s);
        }
        p.a * acc
    }

    /// Constraint potential `C(theta) = <u, Phi(theta)> / ||u||`.
    pub fn potential_c(&self, p: &Particle, act: &Activation) -> Result<f64> {
        let norm = self.nonzero_norm()?;
        let mut acc = 0.0;
        for j in 0..self.q.len() {
            let s = act.value(p.preactivation(self.q.point(j)));
            acc += self.q.weights[j] * self.values[j] * s;
        }
        Ok(p.a * acc / norm)
    }

    /// Ambient gradients of `V` and of `<u, Phi>` (the latter not yet divided by `||u||`).
    fn ambient_gradients(&self, p: &Particle, act: &Activation) -> (AmbientGradient, AmbientGradient) {
        let d = self.q.dim();
        let mut gv = AmbientGradient { da: 0.0, dw: vec![0.0; d], db: 0.0 };
        let mut gc = AmbientGradient { da: 0.0, dw: vec![0.0; d], db: 0.0 };
        for j in 0..self.q.len() {
            let x = self.q.point(j);
            let e = act.eval(p.preactivation(x));
            if e.value == 0.0 && e.d1 == 0.0 && e.d2 == 0.0 {
                continue;
            }
            let wt = self.q.weights[j];
            let gu = self.gradient(j);
            let u = self.values[j];
            let wu = self.potential[j] * u;
            let s: f64 = gu.iter().zip(&p.w).map(|(g, w)| g * w).sum();
            let curv = s * e.d2 + wu * e.d1;
            gv.da += wt * (s * e.d1 + wu * e.value);
            gv.db += wt * p.a * curv;
            gc.da += wt * u * e.value;
            gc.db += wt * p.a * u * e.d1;
            for k in 0..d {
                gv.dw[k] += wt * p.a * (curv * x[k] + e.d1 * gu[k]);
                gc.dw[k] += wt * p.a * u * e.d1 * x[k];
            }
        }
        (gv, gc)
    }

    /// Tangent gradient of `V` at `p`.
    pub fn grad_v(&self, p: &Particle, act: &Activation) -> TangentVector {
        tangent_project(p, &self.ambient_gradients(p, act).0)
    }

    /// Tangent gradient of `C` at `p`.
    pub fn grad_c(&self, p: &Particle, act: &Activation) -> Result<TangentVector> {
        let norm = self.nonzero_norm()?;
        let mut g = self.ambient_gradients(p, act).1;
        g.da /= norm;
        g.db /= norm;
        g.dw.iter_mut().for_each(|x| *x /= norm);
        Ok(tangent_project(p, &g))
    }

    /// Tangent gradients of `V` and `C` at every particle of `u`.
    pub fn particle_gradients(&self, u: &Ensemble, act: &Activation) -> Result<ParticleGradients> {
        let norm = self.nonzero_norm()?;
        let per_particle = |p: &Particle| {
            let (gv, mut gc) = self.ambient_gradients(p, act);
            gc.da /= norm;
            gc.db /= norm;
            gc.dw.iter_mut().for_each(|x| *x /= norm);
            (tangent_project(p, &gv), tangent_project(p, &gc))
        };
        let pairs: Vec<_> = if u.len() * self.q.len() >= PARALLEL_THRESHOLD {
            u.particles().par_iter().map(per_particle).collect()
        } else {
            u.particles().iter().map(per_particle).collect()
        };
        let (v, c) = pairs.into_iter().unzip();
        Ok(ParticleGradients { v, c })
    }

    /// Lagrange multiplier and constrained velocity for the ensemble `u`
    /// that produced this sample.
    pub fn velocity(&self, u: &Ensemble, act: &Activation) -> Result<VelocityField> {
        self.particle_gradients(u, act)?.velocity()
    }

    /// Largest `|V(theta) - multiplier C(theta)|` over the probe particles.
    pub fn max_constrained_potential(&self, multiplier: f64, probes: &[Particle], act: &Activation) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in probes {
            let r = self.potential_v(p, act) - multiplier * self.potential_c(p, act)?;
            worst = worst.max(r.abs());
        }
        Ok(worst)
    }
}

/// Per-particle tangent gradients of the energy and constraint potentials.
#[derive(Debug, Clone)]
pub struct ParticleGradients {
    pub v: Vec<TangentVector>,
    pub c: Vec<TangentVector>,
}

impl ParticleGradients {
    /// `<grad V, grad C>_{L^2(mu)} / ||grad C||^2_{L^2(mu)}`.
    pub fn sigma_mu(&self) -> Result<f64> {
        let num: f64 = self.v.iter().zip(&self.c).map(|(v, c)| v.dot(c)).sum();
        let den: f64 = self.c.iter().map(TangentVector::norm_sq).sum();
        if !(den > 0.0) || !den.is_finite() {
            return Err(Error::DegenerateConstraintGradient(den));
        }
        Ok(num / den)
    }

    /// `||grad C||^2_{L^2(mu)} = (1/m) sum_i |grad C(theta_i)|^2`.
    pub fn constraint_gradient_norm_sq(&self) -> f64 {
        self.c.iter().map(TangentVector::norm_sq).sum::<f64>() / self.c.len() as f64
    }

    pub fn velocity(&self) -> Result<VelocityField> {
        let sigma_mu = self.sigma_mu()?;
        let tangents: Vec<TangentVector> =
            self.v.iter().zip(&self.c).map(|(v, c)| v.add_scaled(-sigma_mu, c).scaled(-1.0)).collect();
        let local_slope = (tangents.iter().map(TangentVector::norm_sq).sum::<f64>() / tangents.len() as f64).sqrt();
        Ok(VelocityField { tangents, sigma_mu, local_slope })
    }
}

/// Constrained velocity of every particle.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub tangents: Vec<TangentVector>,
    pub sigma_mu: f64,
    /// `||v||_{L^2(mu)}`.
    pub local_slope: f64,
}

impl VelocityField {
    /// `<v, g>_{L^2(mu)}` against another per-particle field.
    pub fn inner(&self, other: &[TangentVector]) -> f64 {
        self.tangents.iter().zip(other).map(|(v, g)| v.dot(g)).sum::<f64>() / self.tangents.len() as f64
    }

    pub fn max_speed(&self) -> f64 {
        self.tangents.iter().map(|v| v.norm_sq().sqrt()).fold(0.0, f64::max)
    }
}

pub fn energy(u: &impl TrialFunction, q: &QuadratureSet, w: &PotentialSpec) -> Result<f64> {
    Ok(FieldSample::new(u, q, w)?.energy())
}

pub fn constraint(u: &impl TrialFunction, q: &QuadratureSet) -> Result<f64> {
    Ok(FieldSample::new(u, q, &PotentialSpec::Zero)?.constraint())
}

pub fn potential_v(u: &Ensemble, p: &Particle, q: &QuadratureSet, w: &PotentialSpec) -> Result<f64> {
    let s = FieldSample::of_ensemble(u, q, w)?;
    Ok(s.potential_v(p, u.field().activation()))
}

pub fn potential_c(u: &Ensemble, p: &Particle, q: &QuadratureSet) -> Result<f64> {
    let s = FieldSample::of_ensemble(u, q, &PotentialSpec::Zero)?;
    s.potential_c(p, u.field().activation())
}

pub fn grad_v(u: &Ensemble, p: &Particle, q: &QuadratureSet, w: &PotentialSpec) -> Result<TangentVector> {
    let s = FieldSample::of_ensemble(u, q, w)?;
    Ok(s.grad_v(p, u.field().activation()))
}

pub fn grad_c(u: &Ensemble, p: &Particle, q: &QuadratureSet) -> Result<TangentVector> {
    let s = FieldSample::of_ensemble(u, q, &PotentialSpec::Zero)?;
    s.grad_c(p, u.field().activation())
}

pub fn sigma_mu(u: &Ensemble, q: &QuadratureSet, w: &PotentialSpec) -> Result<f64> {
    let s = FieldSample::of_ensemble(u, q, w)?;
    s.particle_gradients(u, u.field().activation())?.sigma_mu()
}

pub fn velocity(u: &Ensemble, q: &QuadratureSet, w: &PotentialSpec) -> Result<VelocityField> {
    let s = FieldSample::of_ensemble(u, q, w)?;
    s.velocity(u, u.field().activation())
}

/// Bias range `[-sqrt(d) - 2, sqrt(d) + 2]` covered by initial and probe particles.
pub fn bias_range(d: usize) -> (f64, f64) {
    let r = (d as f64).sqrt() + 2.0;
    (-r, r)
}

/// Uniform random unit vector.
pub fn random_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = crate::geometry::norm(&w);
        if n > 1e-12 {
            return w.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Probe particles `(1, w, b)` with `w` uniform on the sphere and `b`
/// uniform on [`bias_range`].
pub fn probe_particles<R: Rng + ?Sized>(d: usize, count: usize, rng: &mut R) -> Vec<Particle> {
    let (lo, hi) = bias_range(d);
    (0..count)
        .map(|_| {
            let w = random_direction(d, rng);
            Particle { a: 1.0, w, b: rng.random_range(lo..=hi) }
        })
        .collect()
}

/// Largest `|V(theta) - sigma_mu C(theta)|` over random probe particles.
/// Vanishes at a stationary point of the constrained flow.
pub fn stationarity_residual<R: Rng + ?Sized>(
    u: &Ensemble,
    q: &QuadratureSet,
    w: &PotentialSpec,
    probe_count: usize,
    rng: &mut R,
) -> Result<f64> {
    let s = FieldSample::of_ensemble(u, q, w)?;
    let field = u.field();
    let act = field.activation();
    let sigma = s.particle_gradients(u, act)?.sigma_mu()?;
    let probes = probe_particles(u.dim(), probe_count, rng);
    s.max_constrained_potential(sigma, &probes, act)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{evaluate, AnalyticFunction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_ensemble(rng: &mut ChaCha8Rng, m: usize, d: usize, tau: f64) -> Ensemble {
        let (lo, hi) = bias_range(d);
        let ps = (0..m)
            .map(|_| Particle { a: rng.random_range(-2.0..3.0), w: random_direction(d, rng), b: rng.random_range(lo * 0.5..hi * 0.5) })
            .collect();
        Ensemble::new(ps, tau).unwrap()
    }

    #[test]
    fn grid_weights_and_layout() {
        let q = QuadratureSet::tensor_grid(2, 4).unwrap();
        assert_eq!(q.len(), 25);
        assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(q.point(1), &[0.0, 0.25]);
        assert_eq!(q.point(5), &[0.25, 0.0]);
        assert!(QuadratureSet::tensor_grid(4, 4).is_err());
        let q3 = QuadratureSet::tensor_grid(3, 6).unwrap();
        assert!((q3.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q3.points().all(|x| x.iter().all(|c| (0.0..=1.0).contains(c))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mc = QuadratureSet::monte_carlo(5, 100, &mut rng).unwrap();
        assert!((mc.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(QuadratureSet::from_points(2, vec![0.5, 1.5]).is_err());
    }

    #[test]
    fn analytic_energies() {
        let q = QuadratureSet::tensor_grid(2, 256).unwrap();
        let one = AnalyticFunction { dim: 2, value: |_: &[f64]| 1.0, gradient: |_: &[f64], g: &mut [f64]| g.fill(0.0) };
        assert_eq!(energy(&one, &q, &PotentialSpec::Zero).unwrap(), 0.0);
        assert!(constraint(&one, &q).unwrap().abs() < 1e-12);
        let two = AnalyticFunction { dim: 2, value: |_: &[f64]| 2.0, gradient: |_: &[f64], g: &mut [f64]| g.fill(0.0) };
        assert!((constraint(&two, &q).unwrap() - 1.0).abs() < 1e-12);

        let pi = std::f64::consts::PI;
        let cos = AnalyticFunction {
            dim: 2,
            value: move |x: &[f64]| 2f64.sqrt() * (pi * x[0]).cos(),
            gradient: move |x: &[f64], g: &mut [f64]| {
                g[0] = -2f64.sqrt() * pi * (pi * x[0]).sin();
                g[1] = 0.0;
            },
        };
        let e = energy(&cos, &q, &PotentialSpec::Zero).unwrap();
        assert!((e - pi * pi).abs() < 1e-10, "{e}");
    }

    #[test]
    fn monte_carlo_energy_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_ensemble(&mut rng, 10, 2, 10.0);
        let w = PotentialSpec::Cos1d(100.0);
        let small = QuadratureSet::monte_carlo(2, 2000, &mut rng).unwrap();
        let big = QuadratureSet::monte_carlo(2, 20000, &mut rng).unwrap();
        let s = FieldSample::of_ensemble(&u, &small, &w).unwrap();
        // Per-sample energy density for the standard error.
        let dens: Vec<f64> = (0..small.len())
            .map(|j| {
                let g = s.gradient(j);
                g.iter().map(|x| x * x).sum::<f64>() + w.eval(small.point(j)) * s.values()[j].powi(2)
            })
            .collect();
        let mean = dens.iter().sum::<f64>() / dens.len() as f64;
        let var = dens.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (dens.len() - 1) as f64;
        let se = (var / dens.len() as f64 + var / big.len() as f64).sqrt();
        let e_big = energy(&u.field(), &big, &w).unwrap();
        assert!((s.energy() - e_big).abs() < 3.0 * se, "{} vs {e_big} (se {se})", s.energy());
    }

    #[test]
    fn normalized_ensemble_has_zero_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut u = random_ensemble(&mut rng, 8, 2, 20.0);
        let q = QuadratureSet::tensor_grid(2, 32).unwrap();
        let n = FieldSample::of_ensemble(&u, &q, &PotentialSpec::Zero).unwrap().norm();
        u.scale_amplitudes(1.0 / n);
        assert!(constraint(&u.field(), &q).unwrap().abs() <= 1e-10);
    }

    fn naive_potentials(u: &Ensemble, p: &Particle, q: &QuadratureSet, w: &PotentialSpec) -> (f64, f64) {
        let act = Activation::shared(u.tau()).unwrap();
        let (mut v, mut c, mut nn) = (0.0, 0.0, 0.0);
        for (x, wt) in q.points().zip(q.weights()) {
            let uu = evaluate(u, x);
            let gu = crate::field::evaluate_grad(u, x);
            let gphi = crate::field::feature_xgrad(p, x, &act);
            let phi = crate::field::feature(p, x, &act);
            v += wt * (gu.iter().zip(&gphi).map(|(a, b)| a * b).sum::<f64>() + w.eval(x) * uu * phi);
            c += wt * uu * phi;
            nn += wt * uu * uu;
        }
        (v, c / nn.sqrt())
    }

    #[test]
    fn potentials_match_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_ensemble(&mut rng, 6, 2, 10.0);
        let q = QuadratureSet::tensor_grid(2, 24).unwrap();
        let w = PotentialSpec::ExpDiag(100.0);
        for _ in 0..10 {
            let p = random_ensemble(&mut rng, 1, 2, 10.0).particles()[0].clone();
            let (v, c) = naive_potentials(&u, &p, &q, &w);
            assert!((potential_v(&u, &p, &q, &w).unwrap() - v).abs() < 1e-10);
            assert!((potential_c(&u, &p, &q).unwrap() - c).abs() < 1e-12);
        }
        let dead = Particle { a: 0.0, w: vec![1.0, 0.0], b: 0.2 };
        assert_eq!(potential_v(&u, &dead, &q, &w).unwrap(), 0.0);
        assert_eq!(potential_c(&u, &dead, &q).unwrap(), 0.0);
        // Slab of `far` misses the cube entirely.
        let far = Particle { a: 1.0, w: vec![1.0, 0.0], b: 5.0 };
        assert_eq!(potential_v(&u, &far, &q, &w).unwrap(), 0.0);
    }

    #[test]
    fn self_inner_product_of_singleton() {
        let p = Particle { a: 1.0, w: vec![0.6, 0.8], b: -0.4 };
        let u = Ensemble::new(vec![p.clone()], 20.0).unwrap();
        let q = QuadratureSet::tensor_grid(2, 40).unwrap();
        let s = FieldSample::of_ensemble(&u, &q, &PotentialSpec::Zero).unwrap();
        let c = potential_c(&u, &p, &q).unwrap();
        assert!((c - s.norm()).abs() < 1e-14);
    }

    #[test]
    fn zero_field_is_degenerate() {
        let p = Particle { a: 0.0, w: vec![1.0, 0.0], b: 0.0 };
        let u = Ensemble::new(vec![p.clone()], 20.0).unwrap();
        let q = QuadratureSet::tensor_grid(2, 8).unwrap();
        assert!(matches!(potential_c(&u, &p, &q), Err(Error::DegenerateMeasure)));
        assert!(matches!(grad_c(&u, &p, &q), Err(Error::DegenerateMeasure)));
        assert!(matches!(velocity(&u, &q, &PotentialSpec::Zero), Err(Error::DegenerateMeasure)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_ensemble(&mut rng, 5, 2, 5.0);
        let q = QuadratureSet::tensor_grid(2, 32).unwrap();
        let w = PotentialSpec::Cos1d(100.0);
        let s = FieldSample::of_ensemble(&u, &q, &w).unwrap();
        let act = Activation::shared(5.0).unwrap();
        for _ in 0..20 {
            let p = random_ensemble(&mut rng, 1, 2, 5.0).particles()[0].clone();
            let gv = s.grad_v(&p, &act);
            let gc = s.grad_c(&p, &act).unwrap();
            assert!(gv.dw.iter().zip(&p.w).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-14);
            let dir = TangentVector { da: 0.3, dw: vec![-p.w[1], p.w[0]], db: -0.7 };
            let h = 1e-6;
            let plus = crate::geometry::exp_map(&p, &dir, h);
            let minus = crate::geometry::exp_map(&p, &dir, -h);
            let fd_v = (s.potential_v(&plus, &act) - s.potential_v(&minus, &act)) / (2.0 * h);
            let fd_c = (s.potential_c(&plus, &act).unwrap() - s.potential_c(&minus, &act).unwrap()) / (2.0 * h);
            assert!((gv.dot(&dir) - fd_v).abs() <= 1e-5 * fd_v.abs().max(1.0), "{} vs {fd_v}", gv.dot(&dir));
            assert!((gc.dot(&dir) - fd_c).abs() <= 1e-5 * fd_c.abs().max(1.0));
        }
        let dead = Particle { a: 0.0, w: vec![1.0, 0.0], b: 0.1 };
        let g = s.grad_v(&dead, &act);
        assert_eq!((g.dw.clone(), g.db), (vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn velocity_is_orthogonal_to_constraint_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = QuadratureSet::tensor_grid(2, 24).unwrap();
        for _ in 0..5 {
            let u = random_ensemble(&mut rng, 12, 2, 20.0);
            let s = FieldSample::of_ensemble(&u, &q, &PotentialSpec::CosDiag(100.0)).unwrap();
            let g = s.particle_gradients(&u, u.field().activation()).unwrap();
            let v = g.velocity().unwrap();
            let inner = v.inner(&g.c);
            let scale = v.local_slope * g.constraint_gradient_norm_sq().sqrt();
            assert!(inner.abs() <= 1e-10 * scale.max(1e-300), "{inner} vs {scale}");
            let naive = (v.tangents.iter().map(|t| t.norm_sq()).sum::<f64>() / 12.0).sqrt();
            assert!((naive - v.local_slope).abs() < 1e-12 * naive);
        }
    }

    #[test]
    fn sigma_mu_of_parallel_gradients() {
        let g = ParticleGradients {
            v: vec![TangentVector { da: 3.0, dw: vec![0.0, 1.5], db: -6.0 }],
            c: vec![TangentVector { da: 2.0, dw: vec![0.0, 1.0], db: -4.0 }],
        };
        assert_eq!(g.sigma_mu().unwrap(), 1.5);
        assert!(g.velocity().unwrap().local_slope < 1e-15);
        let zero = ParticleGradients { v: vec![TangentVector::zero(2)], c: vec![TangentVector::zero(2)] };
        assert!(matches!(zero.sigma_mu(), Err(Error::DegenerateConstraintGradient(_))));
    }

    #[test]
    fn nondegeneracy_on_constraint_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = QuadratureSet::tensor_grid(2, 24).unwrap();
        for _ in 0..5 {
            let mut u = random_ensemble(&mut rng, 10, 2, 20.0);
            let n = FieldSample::of_ensemble(&u, &q, &PotentialSpec::Zero).unwrap().norm();
            u.scale_amplitudes(1.0 / n);
            let s = FieldSample::of_ensemble(&u, &q, &PotentialSpec::Zero).unwrap();
            let g = s.particle_gradients(&u, u.field().activation()).unwrap();
            let a2 = u.particles().iter().map(|p| p.a * p.a).sum::<f64>() / u.len() as f64;
            assert!(g.constraint_gradient_norm_sq() * a2 >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn probes_outside_bias_range_contribute_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_ensemble(&mut rng, 10, 3, 20.0);
        let q = QuadratureSet::monte_carlo(3, 500, &mut rng).unwrap();
        let s = FieldSample::of_ensemble(&u, &q, &PotentialSpec::Cos1d(100.0)).unwrap();
        let act = Activation::shared(20.0).unwrap();
        let (_, hi) = bias_range(3);
        let probes: Vec<Particle> =
            (0..20).map(|k| Particle { a: 1.0, w: random_direction(3, &mut rng), b: if k % 2 == 0 { hi + 0.01 } else { -hi - 0.01 } }).collect();
        assert_eq!(s.max_constrained_potential(17.0, &probes, &act).unwrap(), 0.0);
    }
}
