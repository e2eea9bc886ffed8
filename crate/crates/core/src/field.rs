//! Particle networks and the functions they represent.
//!
//! An [`Ensemble`] of `m` particles stands for the uniform empirical measure
//! `mu = (1/m) sum_i delta_{theta_i}`, and represents
//! `u(x) = (1/m) sum_i a_i sigma_{H,tau}(w_i . x + b_i)`.
//!
//! # Checkpoint format
//!
//! Plain UTF-8 text, one record per line, numbers written with Rust's
//! shortest round-trip formatting so a write/read cycle is bit exact:
//!
//! ```text
//! spectralflow-ensemble v1
//! d <dimension>
//! tau <tau>
//! m <particle count>
//! <a> <b> <w_1> ... <w_d>      (m lines)
//! ```

use std::fs;
use std::path::Path;

use crate::activation::{Activation, MollifierTable};
use crate::error::{Error, Result};
use crate::geometry::{AmbientGradient, Particle};

const CHECKPOINT_MAGIC: &str = "spectralflow-ensemble v1";

/// Uniformly weighted particles sharing a dimension and a mollification level.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: Vec<Particle>,
    tau: f64,
    d: usize,
}

impl Ensemble {
    pub fn new(particles: Vec<Particle>, tau: f64) -> Result<Self> {
        let Some(first) = particles.first() else {
            return Err(Error::Domain("ensemble needs at least one particle".into()));
        };
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("tau must be positive, got {tau}")));
        }
        let d = first.dim();
        for p in &particles {
            if p.dim() != d {
                return Err(Error::Domain("particles of mixed dimension".into()));
            }
            let n = crate::geometry::norm(&p.w);
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("particle direction off the sphere (|w| = {n})")));
            }
        }
        Ok(Self { particles, tau, d })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub(crate) fn particles_mut(&mut self) -> &mut [Particle] {
        &mut self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Multiplies every outer weight by `c`, which scales `u` by `c`.
    pub fn scale_amplitudes(&mut self, c: f64) {
        for p in &mut self.particles {
            p.a *= c;
        }
    }

    /// Field view using the process-wide mollifier table.
    pub fn field(&self) -> EnsembleField<'_> {
        self.field_with(MollifierTable::shared())
    }

    pub fn field_with<'a>(&'a self, table: &'a MollifierTable) -> EnsembleField<'a> {
        EnsembleField { ensemble: self, act: Activation::new(self.tau, table).expect("tau validated at construction") }
    }

    pub fn write_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut s = format!("{CHECKPOINT_MAGIC}\nd {}\ntau {:?}\nm {}\n", self.d, self.tau, self.len());
        for p in &self.particles {
            s.push_str(&format!("{:?} {:?}", p.a, p.b));
            for w in &p.w {
                s.push_str(&format!(" {w:?}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_checkpoint_str(&text).map_err(|e| match e {
            Error::Parse { line, message } => {
                Error::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") }
            }
            other => other,
        })
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse { line: 0, message: format!("missing {what}") });
        let (line, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse { line, message: format!("expected {CHECKPOINT_MAGIC:?}") });
        }
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (line, l) = next(key)?;
            match l.split_once(' ') {
                Some((k, v)) if k == key => Ok((line, v.trim().to_string())),
                _ => Err(Error::Parse { line, message: format!("expected `{key} <value>`") }),
            }
        };
        let bad = |line: usize, what: &str| Error::Parse { line, message: format!("invalid {what}") };
        let (l, d) = header("d")?;
        let d: usize = d.parse().map_err(|_| bad(l, "dimension"))?;
        let (l, tau) = header("tau")?;
        let tau: f64 = tau.parse().map_err(|_| bad(l, "tau"))?;
        let (l, m) = header("m")?;
        let m: usize = m.parse().map_err(|_| bad(l, "particle count"))?;
        let mut particles = Vec::with_capacity(m);
        for _ in 0..m {
            let (line, l) = next("particle")?;
            let nums: Vec<f64> =
                l.split_whitespace().map(|t| t.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad(line, "number"))?;
            if nums.len() != d + 2 {
                return Err(Error::Parse { line, message: format!("expected {} numbers, got {}", d + 2, nums.len()) });
            }
            // Stored directions are already unit; keep them bit exact.
            particles.push(Particle { a: nums[0], b: nums[1], w: nums[2..].to_vec() });
        }
        Ensemble::new(particles, tau)
    }
}

/// A function on the cube with a gradient, sampled by the quadrature layer.
pub trait TrialFunction: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes `grad u(x)` into `grad` and returns `u(x)`.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Closed-form trial function, mostly for tests and calibration.
pub struct AnalyticFunction<F, G> {
    pub dim: usize,
    pub value: F,
    pub gradient: G,
}

impl<F, G> TrialFunction for AnalyticFunction<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.gradient)(x, grad);
        (self.value)(x)
    }
}

/// `Phi_tau(p; x) = a sigma_{H,tau}(w . x + b)`.
#[inline]
pub fn feature(p: &Particle, x: &[f64], act: &Activation) -> f64 {
    p.a * act.value(p.preactivation(x))
}

/// Spatial gradient `a sigma'(w . x + b) w`.
pub fn feature_xgrad(p: &Particle, x: &[f64], act: &Activation) -> Vec<f64> {
    let (_, d1) = act.value_d1(p.preactivation(x));
    p.w.iter().map(|w| p.a * d1 * w).collect()
}

/// Ambient parameter gradient `(sigma(z), a sigma'(z) x, a sigma'(z))`, `z = w . x + b`.
pub fn feature_theta_grad(p: &Particle, x: &[f64], act: &Activation) -> AmbientGradient {
    let (v, d1) = act.value_d1(p.preactivation(x));
    AmbientGradient { da: v, dw: x.iter().map(|xk| p.a * d1 * xk).collect(), db: p.a * d1 }
}

/// Sum in a fixed pairwise order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// An ensemble bound to an activation.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleField<'a> {
    ensemble: &'a Ensemble,
    act: Activation<'a>,
}

impl<'a> EnsembleField<'a> {
    pub fn ensemble(&self) -> &'a Ensemble {
        self.ensemble
    }

    pub fn activation(&self) -> &Activation<'a> {
        &self.act
    }
}

impl TrialFunction for EnsembleField<'_> {
    fn dim(&self) -> usize {
        self.ensemble.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        evaluate_with(self.ensemble, x, &self.act)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let ps = self.ensemble.particles();
        let m = ps.len() as f64;
        let mut vals = Vec::with_capacity(ps.len());
        let mut slopes = Vec::with_capacity(ps.len());
        for p in ps {
            let (v, d1) = self.act.value_d1(p.preactivation(x));
            vals.push(p.a * v);
            slopes.push(p.a * d1);
        }
        let mut buf = vec![0.0; ps.len()];
        for (k, g) in grad.iter_mut().enumerate() {
            for (i, p) in ps.iter().enumerate() {
                buf[i] = slopes[i] * p.w[k];
            }
            *g = pairwise_sum(&buf) / m;
        }
        pairwise_sum(&vals) / m
    }
}

fn evaluate_with(u: &Ensemble, x: &[f64], act: &Activation) -> f64 {
    let terms: Vec<f64> = u.particles().iter().map(|p| feature(p, x, act)).collect();
    pairwise_sum(&terms) / u.len() as f64
}

/// `u(x) = (1/m) sum_i Phi(p_i; x)`.
pub fn evaluate(u: &Ensemble, x: &[f64]) -> f64 {
    u.field().value(x)
}

/// `grad u(x) = (1/m) sum_i a_i sigma'(z_i) w_i`.
pub fn evaluate_grad(u: &Ensemble, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; u.dim()];
    u.field().value_grad(x, &mut g);
    g
}
