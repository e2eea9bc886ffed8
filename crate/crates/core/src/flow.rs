//! Time integration of the norm-constrained gradient flow.
//!
//! Two integrators are provided:
//!
//! * [`Integrator::Lagrangian`] moves every particle along the constrained
//!   velocity `-(grad V - sigma_mu grad C)` with the exponential map, then
//!   applies one common rescale of the outer weights so that `||u|| = 1` on
//!   the quadrature used for the step (forward Euler drifts off the
//!   constraint at second order).
//! * [`Integrator::SgdRenorm`] takes a plain gradient step on the
//!   unconstrained energy over a minibatch and then normalizes the last
//!   layer, i.e. rescales every `a_i` by `1 / ||u||`.
//!
//! Minibatches cycle through a dataset of uniform points drawn once from the
//! run seed. All random streams derive from `(seed, stream id)`, so a run is
//! reproducible bit for bit.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::field::{Ensemble, EnsembleField, TrialFunction};
use crate::functionals::{bias_range, random_direction, FieldSample, QuadratureKind, QuadratureSet, MAX_GRID_DIM};
use crate::geometry::{exp_map_in_place, support_box_radius, Particle, TangentVector};
use crate::potentials::PotentialSpec;
use crate::reference::{l2_error, ReferenceSolution};

pub const DEFAULT_TAU: f64 = 20.0;
pub const DEFAULT_STEPS: usize = 20_000;
pub const DEFAULT_M: usize = 100;
pub const DEFAULT_BATCH: usize = 100;
pub const DEFAULT_DATASET: usize = 100_000;
pub const DEFAULT_EVAL_EVERY: usize = 100;
pub const DEFAULT_EVAL_GRID: usize = 64;
pub const DEFAULT_EVAL_SAMPLES: usize = 10_000;
pub const DEFAULT_PROBES: usize = 256;

/// Header of the per-run CSV file.
pub const CSV_HEADER: &str = "step,time_s,energy,rayleigh,sigma_mu,constraint,local_slope,l2_error,r_t,wall_ms";

const INIT_ATTEMPTS: usize = 8;
const COVERAGE_DIRECTIONS: usize = 100;
const PARALLEL_WORK: usize = 1 << 15;

mod stream {
    pub const INIT: u64 = 0;
    pub const DATASET: u64 = 1;
    pub const EVAL: u64 = 2;
    pub const PROBES: u64 = 3;
    pub const COVERAGE: u64 = 4;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn display<T: fmt::Display, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Lagrangian,
    SgdRenorm,
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integrator::Lagrangian => "lagrangian",
            Integrator::SgdRenorm => "sgd_renorm",
        })
    }
}

impl FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lagrangian" => Ok(Integrator::Lagrangian),
            "sgd_renorm" => Ok(Integrator::SgdRenorm),
            other => Err(Error::Config(format!("unknown integrator {other:?} (expected lagrangian or sgd_renorm)"))),
        }
    }
}

/// Coordinates in which [`Integrator::SgdRenorm`] takes its gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrization {
    /// Steepest descent on `Theta`: every coordinate moves by `-eta grad V`.
    MeanField,
    /// Plain SGD on the weights of `u = sum_i c_i sigma(w_i . x + b_i)`
    /// with `c_i = a_i / m`: in particle units the amplitude moves by
    /// `-2 m eta dV/da` and the inner weights by `-(2 eta / m) grad V`.
    Network,
}

impl Parametrization {
    /// Step multipliers `(amplitude, inner weights)` for an ensemble of `m`.
    pub fn step_scales(self, m: usize) -> (f64, f64) {
        match self {
            Parametrization::MeanField => (1.0, 1.0),
            Parametrization::Network => (2.0 * m as f64, 2.0 / m as f64),
        }
    }
}

impl fmt::Display for Parametrization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parametrization::MeanField => "mean_field",
            Parametrization::Network => "network",
        })
    }
}

impl FromStr for Parametrization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean_field" => Ok(Parametrization::MeanField),
            "network" => Ok(Parametrization::Network),
            other => Err(Error::Config(format!("unknown parametrization {other:?} (expected mean_field or network)"))),
        }
    }
}

/// Where the training integrals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// Minibatches of the pre-sampled dataset (or, for normalization, the
    /// current minibatch).
    Batch,
    /// Fixed tensor trapezoid grid with the given intervals per axis.
    Grid(usize),
}

impl fmt::Display for Quadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quadrature::Batch => f.write_str("batch"),
            Quadrature::Grid(n) => write!(f, "grid:{n}"),
        }
    }
}

impl FromStr for Quadrature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "batch" {
            return Ok(Quadrature::Batch);
        }
        if let Some(n) = s.strip_prefix("grid:") {
            let n: usize = n.trim().parse().map_err(|_| Error::Config(format!("invalid grid size in {s:?}")))?;
            return Ok(Quadrature::Grid(n));
        }
        Err(Error::Config(format!("unknown quadrature {s:?} (expected batch or grid:<N>)")))
    }
}

/// Parameters of a single run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowConfig {
    pub d: usize,
    pub m: usize,
    pub tau: f64,
    #[serde(serialize_with = "display")]
    pub integrator: Integrator,
    #[serde(serialize_with = "display")]
    pub parametrization: Parametrization,
    pub steps: usize,
    /// Step size; `None` means `1 / (tau m)`.
    pub eta: Option<f64>,
    pub batch: usize,
    pub dataset_size: usize,
    #[serde(serialize_with = "display")]
    pub potential: PotentialSpec,
    pub seed: u64,
    pub eval_every: usize,
    pub r_max: Option<f64>,
    pub probe_count: usize,
    #[serde(serialize_with = "display")]
    pub training: Quadrature,
    #[serde(serialize_with = "display")]
    pub normalization: Quadrature,
    pub eval_grid: usize,
    pub eval_samples: usize,
    pub record_timing: bool,
}

impl FlowConfig {
    /// Defaults for everything but the dimension and the potential.
    pub fn new(d: usize, potential: PotentialSpec) -> Self {
        Self {
            d,
            m: DEFAULT_M,
            tau: DEFAULT_TAU,
            integrator: Integrator::SgdRenorm,
            parametrization: Parametrization::MeanField,
            steps: DEFAULT_STEPS,
            eta: None,
            batch: DEFAULT_BATCH,
            dataset_size: DEFAULT_DATASET,
            potential,
            seed: 0,
            eval_every: DEFAULT_EVAL_EVERY,
            r_max: None,
            probe_count: DEFAULT_PROBES,
            training: Quadrature::Batch,
            normalization: Quadrature::Batch,
            eval_grid: DEFAULT_EVAL_GRID,
            eval_samples: DEFAULT_EVAL_SAMPLES,
            record_timing: false,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.eta.unwrap_or(1.0 / (self.tau * self.m as f64))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        let eta = self.step_size();
        if !(eta > 0.0 && eta.is_finite()) {
            return bad(format!("eta must be positive, got {eta}"));
        }
        if self.batch == 0 || self.dataset_size == 0 {
            return bad("batch and dataset_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.d > MAX_GRID_DIM && self.eval_samples == 0 {
            return bad("eval_samples must be at least 1".into());
        }
        if self.d <= MAX_GRID_DIM && self.eval_grid == 0 {
            return bad("eval_grid must be at least 1".into());
        }
        for q in [self.training, self.normalization] {
            if let Quadrature::Grid(n) = q {
                if n == 0 || self.d > MAX_GRID_DIM {
                    return bad(format!("grid quadrature needs intervals >= 1 and d <= {MAX_GRID_DIM}"));
                }
            }
        }
        if let Some(r) = self.r_max {
            if !(r > 0.0) {
                return bad(format!("r_max must be positive, got {r}"));
            }
        }
        self.potential.check_dimension(self.d).map_err(|e| Error::Config(e.to_string()))
    }

    /// Held-out quadrature used for every logged metric.
    pub fn eval_quadrature(&self) -> Result<QuadratureSet> {
        if self.d <= MAX_GRID_DIM {
            QuadratureSet::tensor_grid(self.d, self.eval_grid)
        } else {
            QuadratureSet::monte_carlo(self.d, self.eval_samples, &mut rng_for(self.seed, stream::EVAL))
        }
    }
}

/// Empirical coverage of the initial support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    /// Largest gap between consecutive sorted biases, range ends included.
    pub bias_gap: f64,
    /// Largest angle from a random direction to its nearest `w_i`.
    pub sphere_gap: f64,
}

/// Draws `w_i` uniform on the sphere, `b_i` uniform on the bias range and
/// `a_i = 1`, then rescales every `a_i` by a common factor so that
/// `||u|| = 1` on `q`.
pub fn init_ensemble<R: Rng + ?Sized>(cfg: &FlowConfig, q: &QuadratureSet, rng: &mut R) -> Result<(Ensemble, Coverage)> {
    if cfg.m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    let (lo, hi) = bias_range(cfg.d);
    for _ in 0..INIT_ATTEMPTS {
        let particles: Vec<Particle> = (0..cfg.m)
            .map(|_| {
                let w = random_direction(cfg.d, rng);
                Particle { a: 1.0, w, b: rng.random_range(lo..=hi) }
            })
            .collect();
        let mut u = Ensemble::new(particles, cfg.tau)?;
        let norm = quadrature_norm(&u.field(), q);
        if norm > 0.0 && norm.is_finite() {
            u.scale_amplitudes(1.0 / norm);
            let coverage = coverage(&u, &mut rng_for(cfg.seed, stream::COVERAGE));
            return Ok((u, coverage));
        }
    }
    Err(Error::Initialization(format!(
        "network vanished on the initialization quadrature in {INIT_ATTEMPTS} draws; try another seed"
    )))
}

fn coverage<R: Rng + ?Sized>(u: &Ensemble, rng: &mut R) -> Coverage {
    let (lo, hi) = bias_range(u.dim());
    let mut b: Vec<f64> = u.particles().iter().map(|p| p.b).collect();
    b.sort_by(f64::total_cmp);
    let mut bias_gap = (b[0] - lo).max(hi - b[b.len() - 1]);
    for pair in b.windows(2) {
        bias_gap = bias_gap.max(pair[1] - pair[0]);
    }
    let sphere_gap = (0..COVERAGE_DIRECTIONS)
        .map(|_| {
            let dir = random_direction(u.dim(), rng);
            u.particles()
                .iter()
                .map(|p| crate::geometry::sphere_distance(&dir, &p.w))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    Coverage { bias_gap, sphere_gap }
}

/// `sqrt(sum_j w_j u(x_j)^2)`.
pub fn quadrature_norm(u: &EnsembleField, q: &QuadratureSet) -> f64 {
    let values: Vec<f64> = if q.len() * u.ensemble().len() >= PARALLEL_WORK {
        (0..q.len()).into_par_iter().map(|j| u.value(q.point(j))).collect()
    } else {
        q.points().map(|x| u.value(x)).collect()
    };
    values.iter().zip(q.weights()).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}

/// Multiplier, slope and drift-correction factor of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub sigma_mu: f64,
    pub local_slope: f64,
    pub rescale: f64,
}

fn renormalize(u: &mut Ensemble, q: &QuadratureSet) -> Result<f64> {
    let norm = quadrature_norm(&u.field(), q);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateMeasure);
    }
    if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(1.0);
    }
    u.scale_amplitudes(1.0 / norm);
    Ok(1.0 / norm)
}

/// One explicit step of the constrained flow on `q`, followed by a common
/// outer-weight rescale restoring `||u||_q = 1`.
pub fn step_lagrangian(u: &mut Ensemble, eta: f64, q: &QuadratureSet, w: &PotentialSpec) -> Result<StepReport> {
    step_lagrangian_with(u, eta, q, w, Parametrization::MeanField)
}

/// [`step_lagrangian`] with the velocity rescaled per block as in `param`.
pub fn step_lagrangian_with(
    u: &mut Ensemble,
    eta: f64,
    q: &QuadratureSet,
    w: &PotentialSpec,
    param: Parametrization,
) -> Result<StepReport> {
    let velocity = {
        let field = u.field();
        FieldSample::new(&field, q, w)?.velocity(u, field.activation())?
    };
    advance(u, &velocity.tangents, eta, param);
    let rescale = renormalize(u, q)?;
    Ok(StepReport { sigma_mu: velocity.sigma_mu, local_slope: velocity.local_slope, rescale })
}

fn advance(u: &mut Ensemble, tangents: &[TangentVector], eta: f64, param: Parametrization) {
    let (amp, inner) = param.step_scales(u.len());
    for (p, v) in u.particles_mut().iter_mut().zip(tangents) {
        if amp == inner {
            exp_map_in_place(p, v, eta * inner);
        } else {
            let v = TangentVector { da: v.da * amp / inner, dw: v.dw.clone(), db: v.db };
            exp_map_in_place(p, &v, eta * inner);
        }
    }
}

/// One gradient step on the unconstrained energy over `batch`, then
/// `a_i <- a_i / ||u||` measured on `normalization` (the batch itself when
/// `None`).
pub fn step_sgd_renorm(
    u: &mut Ensemble,
    eta: f64,
    batch: &QuadratureSet,
    w: &PotentialSpec,
    normalization: Option<&QuadratureSet>,
) -> Result<StepReport> {
    step_sgd_renorm_with(u, eta, batch, w, normalization, Parametrization::MeanField)
}

/// [`step_sgd_renorm`] in a chosen parametrization.
pub fn step_sgd_renorm_with(
    u: &mut Ensemble,
    eta: f64,
    batch: &QuadratureSet,
    w: &PotentialSpec,
    normalization: Option<&QuadratureSet>,
    param: Parametrization,
) -> Result<StepReport> {
    let grads = {
        let field = u.field();
        FieldSample::new(&field, batch, w)?.particle_gradients(u, field.activation())?
    };
    let velocity = grads.velocity()?;
    advance(u, &grads.v, -eta, param);
    let rescale = renormalize(u, normalization.unwrap_or(batch))?;
    Ok(StepReport { sigma_mu: velocity.sigma_mu, local_slope: velocity.local_slope, rescale })
}

/// One logged evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRow {
    pub step: usize,
    pub time_s: f64,
    pub energy: f64,
    pub rayleigh: f64,
    pub sigma_mu: f64,
    pub constraint: f64,
    pub local_slope: f64,
    /// NaN without a reference.
    pub l2_error: f64,
    pub r_t: f64,
    pub wall_ms: f64,
    /// Monte-Carlo standard error of `energy` (0 on grids); not part of the CSV.
    #[serde(skip)]
    pub energy_stderr: f64,
}

impl EvalRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.step,
            self.time_s,
            self.energy,
            self.rayleigh,
            self.sigma_mu,
            self.constraint,
            self.local_slope,
            self.l2_error,
            self.r_t,
            self.wall_ms
        )
    }
}

/// A step at which the support radius first exceeded `r_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportEvent {
    pub step: usize,
    pub radius: f64,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: FlowConfig,
    pub rows: Vec<EvalRow>,
    pub ensemble: Ensemble,
    pub coverage: Coverage,
    pub support_events: Vec<SupportEvent>,
    /// `max |V - sigma_mu C|` over random probes at the end of the run.
    pub stationarity: Option<f64>,
    /// Set when a step failed; rows stop at the last good evaluation.
    pub incomplete: Option<String>,
}

impl RunRecord {
    pub fn final_row(&self) -> &EvalRow {
        self.rows.last().expect("a record always holds the initial row")
    }

    pub fn is_complete(&self) -> bool {
        self.incomplete.is_none()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.csv_line());
            s.push('\n');
        }
        s
    }

    /// Config, coverage and diagnostics as JSON.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "step_size": self.config.step_size(),
            "coverage": self.coverage,
            "support_events": self.support_events,
            "stationarity": self.stationarity,
            "incomplete": self.incomplete,
            "rows": self.rows.len(),
            "version": env!("CARGO_PKG_VERSION"),
        })
    }
}

fn batch_quadrature(dataset: &[f64], d: usize, n: usize, k: usize) -> Result<QuadratureSet> {
    let size = dataset.len() / d;
    let start = (k * n) % size;
    let mut points = Vec::with_capacity(n * d);
    for j in 0..n {
        let i = (start + j) % size;
        points.extend_from_slice(&dataset[i * d..(i + 1) * d]);
    }
    QuadratureSet::from_points(d, points)
}

struct Evaluator<'a> {
    q: QuadratureSet,
    w: PotentialSpec,
    reference: Option<(&'a ReferenceSolution, usize)>,
    start: Instant,
    timing: bool,
    eta: f64,
}

impl Evaluator<'_> {
    fn row(&self, u: &Ensemble, step: usize, norm_q: &QuadratureSet) -> Result<EvalRow> {
        let field = u.field();
        let sample = FieldSample::new(&field, &self.q, &self.w)?;
        let velocity = sample.velocity(u, field.activation())?;
        let l2 = match self.reference {
            Some((sol, d)) => {
                let mut unit = u.clone();
                unit.scale_amplitudes(1.0 / sample.norm());
                l2_error(&unit.field(), &sol.extend_to_d(d)?, &self.q)?
            }
            None => f64::NAN,
        };
        Ok(EvalRow {
            step,
            time_s: step as f64 * self.eta,
            energy: sample.energy(),
            rayleigh: sample.rayleigh_quotient()?,
            sigma_mu: velocity.sigma_mu,
            constraint: quadrature_norm(&field, norm_q) - 1.0,
            local_slope: velocity.local_slope,
            l2_error: l2,
            r_t: support_box_radius(u.particles())?,
            wall_ms: if self.timing { self.start.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
            energy_stderr: energy_stderr(&sample, &self.w),
        })
    }
}

fn energy_stderr(sample: &FieldSample, w: &PotentialSpec) -> f64 {
    let q = sample.quadrature();
    if q.kind() != QuadratureKind::MonteCarlo || q.len() < 2 {
        return 0.0;
    }
    let e: Vec<f64> = (0..q.len())
        .map(|j| {
            let g = sample.gradient(j);
            let u = sample.values()[j];
            g.iter().map(|x| x * x).sum::<f64>() + w.eval(q.point(j)) * u * u
        })
        .collect();
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    let var = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Runs the configured flow. Configuration problems are returned as errors;
/// failures during integration end the run early with `incomplete` set.
///
/// With a reference, `l2_error` compares `u / ||u||` (norm on the
/// evaluation quadrature) with the reference extended to `d` dimensions.
pub fn run_flow(cfg: &FlowConfig, reference: Option<&ReferenceSolution>) -> Result<RunRecord> {
    cfg.validate()?;
    if let Some(sol) = reference {
        sol.extend_to_d(cfg.d)?;
    }
    let start = Instant::now();
    let d = cfg.d;
    let eta = cfg.step_size();
    let w = cfg.potential;

    let dataset: Vec<f64> = {
        let mut rng = rng_for(cfg.seed, stream::DATASET);
        (0..cfg.dataset_size * d).map(|_| rng.random::<f64>()).collect()
    };
    let train_grid = match cfg.training {
        Quadrature::Grid(n) => Some(QuadratureSet::tensor_grid(d, n)?),
        Quadrature::Batch => None,
    };
    let norm_grid = match cfg.normalization {
        Quadrature::Grid(n) => Some(QuadratureSet::tensor_grid(d, n)?),
        Quadrature::Batch => None,
    };
    let training_q = |k: usize| -> Result<QuadratureSet> {
        match &train_grid {
            Some(g) => Ok(g.clone()),
            None => batch_quadrature(&dataset, d, cfg.batch, k),
        }
    };

    let eval = Evaluator {
        q: cfg.eval_quadrature()?,
        w,
        reference: reference.map(|r| (r, d)),
        start,
        timing: cfg.record_timing,
        eta,
    };

    // The first normalization quadrature also fixes the initial scale.
    let first = training_q(0)?;
    let mut norm_q = match (&norm_grid, cfg.integrator) {
        (Some(g), Integrator::SgdRenorm) => g.clone(),
        _ => first.clone(),
    };
    let (mut u, coverage) = init_ensemble(cfg, &norm_q, &mut rng_for(cfg.seed, stream::INIT))?;
    let mut record = RunRecord {
        config: cfg.clone(),
        rows: vec![eval.row(&u, 0, &norm_q)?],
        ensemble: u.clone(),
        coverage,
        support_events: Vec::new(),
        stationarity: None,
        incomplete: None,
    };
    let mut above = false;
    for k in 0..cfg.steps {
        let step = k + 1;
        let outcome = (|| -> Result<()> {
            let q = if k == 0 { first.clone() } else { training_q(k)? };
            match cfg.integrator {
                Integrator::Lagrangian => {
                    step_lagrangian_with(&mut u, eta, &q, &w, cfg.parametrization)?;
                    norm_q = q;
                }
                Integrator::SgdRenorm => {
                    step_sgd_renorm_with(&mut u, eta, &q, &w, norm_grid.as_ref(), cfg.parametrization)?;
                    if norm_grid.is_none() {
                        norm_q = q;
                    }
                }
            }
            if let Some(r_max) = cfg.r_max {
                let r = support_box_radius(u.particles())?;
                if r > r_max && !above {
                    record.support_events.push(SupportEvent { step, radius: r });
                }
                above = r > r_max;
            }
            if step % cfg.eval_every == 0 || step == cfg.steps {
                record.rows.push(eval.row(&u, step, &norm_q)?);
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            record.incomplete = Some(format!("step {step}: {e}"));
            break;
        }
    }
    if record.incomplete.is_none() && cfg.probe_count > 0 {
        let mut rng = rng_for(cfg.seed, stream::PROBES);
        match crate::functionals::stationarity_residual(&u, &eval.q, &w, cfg.probe_count, &mut rng) {
            Ok(r) => record.stationarity = Some(r),
            Err(e) => record.incomplete = Some(format!("stationarity probe: {e}")),
        }
    }
    record.ensemble = u;
    Ok(record)
}

/// Growth of the support radius over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportGrowth {
    pub all_finite: bool,
    /// Least-squares slope of `ln r_t` against `t`.
    pub rate: f64,
    pub max_radius: f64,
    pub events: Vec<SupportEvent>,
}

pub fn support_growth_check(record: &RunRecord) -> SupportGrowth {
    let all_finite = record.rows.iter().all(|r| r.r_t.is_finite());
    let pts: Vec<(f64, f64)> =
        record.rows.iter().filter(|r| r.r_t > 0.0 && r.r_t.is_finite()).map(|r| (r.time_s, r.r_t.ln())).collect();
    let rate = if pts.len() < 2 {
        0.0
    } else {
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    };
    let max_radius = record.rows.iter().map(|r| r.r_t).fold(0.0, f64::max);
    SupportGrowth { all_finite, rate, max_radius, events: record.support_events.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(potential: PotentialSpec) -> FlowConfig {
        FlowConfig { m: 20, steps: 30, eval_every: 10, dataset_size: 1000, eval_grid: 16, probe_count: 8, ..FlowConfig::new(2, potential) }
    }

    #[test]
    fn init_is_normalized_with_default_bias_range() {
        let cfg = small(PotentialSpec::Cos1d(100.0));
        let q = QuadratureSet::tensor_grid(2, 16).unwrap();
        let (u, cov) = init_ensemble(&cfg, &q, &mut rng_for(3, 0)).unwrap();
        assert!((quadrature_norm(&u.field(), &q) - 1.0).abs() < 1e-10);
        let (lo, hi) = bias_range(2);
        assert!((hi - (2f64.sqrt() + 2.0)).abs() < 1e-15);
        assert!(u.particles().iter().all(|p| p.b >= lo && p.b <= hi));
        let a0 = u.particles()[0].a;
        assert!(u.particles().iter().all(|p| p.a == a0));
        assert!(cov.bias_gap > 0.0 && cov.sphere_gap >= 0.0);

        let one = FlowConfig { m: 1, ..cfg };
        let (u1, _) = init_ensemble(&one, &q, &mut rng_for(4, 0)).unwrap();
        assert!((quadrature_norm(&u1.field(), &q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_displacement_leaves_state_unchanged() {
        let cfg = small(PotentialSpec::Cos1d(100.0));
        let q = QuadratureSet::tensor_grid(2, 16).unwrap();
        let (mut u, _) = init_ensemble(&cfg, &q, &mut rng_for(1, 0)).unwrap();
        let before = u.clone();
        let rep = step_lagrangian(&mut u, 0.0, &q, &cfg.potential).unwrap();
        assert!(rep.local_slope > 0.0);
        assert_eq!(rep.rescale, 1.0);
        assert_eq!(u, before);
    }

    #[test]
    fn lagrangian_step_is_first_order_and_restores_constraint() {
        let cfg = small(PotentialSpec::Cos1d(100.0));
        let q = QuadratureSet::tensor_grid(2, 24).unwrap();
        let (u0, _) = init_ensemble(&cfg, &q, &mut rng_for(5, 0)).unwrap();
        let eta = 1e-5;
        let displacement = |h: f64| {
            let mut u = u0.clone();
            step_lagrangian(&mut u, h, &q, &cfg.potential).unwrap();
            assert!((quadrature_norm(&u.field(), &q) - 1.0).abs() <= 1e-10);
            let s: f64 = u
                .particles()
                .iter()
                .zip(u0.particles())
                .map(|(a, b)| crate::geometry::geodesic_distance(a, b).powi(2))
                .sum();
            s.sqrt()
        };
        let ratio = displacement(eta) / displacement(eta / 2.0);
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn sgd_renorm_normalizes_on_the_batch() {
        let cfg = small(PotentialSpec::Cos1d(100.0));
        let mut rng = rng_for(6, 0);
        let batch = QuadratureSet::monte_carlo(2, 100, &mut rng).unwrap();
        let (mut u, _) = init_ensemble(&cfg, &batch, &mut rng).unwrap();
        step_sgd_renorm(&mut u, cfg.step_size(), &batch, &cfg.potential, None).unwrap();
        assert!((quadrature_norm(&u.field(), &batch) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sgd_renorm_single_particle_energy_descends() {
        // Hat peaked at the boundary node, drifting inward.
        let q = QuadratureSet::tensor_grid(1, 64).unwrap();
        let p = Particle::new(1.0, vec![1.0], 0.0).unwrap();
        let mut u = Ensemble::new(vec![p], 5.0).unwrap();
        u.scale_amplitudes(1.0 / quadrature_norm(&u.field(), &q));
        let energy = |u: &Ensemble| FieldSample::of_ensemble(u, &q, &PotentialSpec::Zero).unwrap().energy();
        let mut e = energy(&u);
        for _ in 0..100 {
            step_sgd_renorm(&mut u, 1e-3, &q, &PotentialSpec::Zero, None).unwrap();
            let next = energy(&u);
            assert!(next <= e + 1e-12, "{next} > {e}");
            e = next;
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = small(PotentialSpec::Cos1d(100.0));
        let a = run_flow(&cfg, None).unwrap();
        let b = run_flow(&cfg, None).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.ensemble, b.ensemble);
        assert!(a.is_complete());
        assert_eq!(a.rows.len(), 4);
        assert!(a.rows.iter().all(|r| r.constraint.abs() <= 1e-8));
        assert!(a.rows.windows(2).all(|w| w[0].step < w[1].step));

        let grid = FlowConfig { training: Quadrature::Grid(8), integrator: Integrator::Lagrangian, ..cfg.clone() };
        let g = run_flow(&grid, None).unwrap();
        assert!(g.rows.iter().all(|r| r.constraint.abs() <= 1e-8));
    }

    #[test]
    fn zero_steps_gives_initial_row_only() {
        let cfg = FlowConfig { steps: 0, ..small(PotentialSpec::Zero) };
        let rec = run_flow(&cfg, None).unwrap();
        assert_eq!(rec.rows.len(), 1);
        assert_eq!(rec.to_csv().lines().next().unwrap(), CSV_HEADER);
        assert!(rec.final_row().l2_error.is_nan());
    }

    #[test]
    fn support_growth_reports() {
        let cfg = FlowConfig { steps: 0, ..small(PotentialSpec::Zero) };
        let mut rec = run_flow(&cfg, None).unwrap();
        let flat = support_growth_check(&rec);
        assert!(flat.all_finite);
        assert_eq!(flat.rate, 0.0);

        let r0 = rec.rows[0];
        for k in 1..5 {
            rec.rows.push(EvalRow { step: k, time_s: k as f64, r_t: r0.r_t * (0.5 * k as f64).exp(), ..r0 });
        }
        let grown = support_growth_check(&rec);
        assert!((grown.rate - 0.5).abs() < 1e-9);

        let tight = FlowConfig { r_max: Some(1e-3), steps: 3, ..small(PotentialSpec::Cos1d(100.0)) };
        let rec = run_flow(&tight, None).unwrap();
        assert_eq!(support_growth_check(&rec).events.len(), 1);
        assert_eq!(rec.support_events[0].step, 1);
    }

    #[test]
    fn config_validation() {
        let ok = small(PotentialSpec::Cos1d(100.0));
        assert!(ok.validate().is_ok());
        assert!((ok.step_size() - 1.0 / (20.0 * 20.0)).abs() < 1e-18);
        assert!(FlowConfig { m: 0, ..ok.clone() }.validate().is_err());
        assert!(FlowConfig { eta: Some(-1.0), ..ok.clone() }.validate().is_err());
        assert!(FlowConfig { d: 1, potential: PotentialSpec::CosDiag(1.0), ..ok.clone() }.validate().is_err());
        assert!(FlowConfig { d: 4, training: Quadrature::Grid(8), ..ok.clone() }.validate().is_err());
        assert_eq!("grid:32".parse::<Quadrature>().unwrap(), Quadrature::Grid(32));
        assert_eq!("sgd_renorm".parse::<Integrator>().unwrap().to_string(), "sgd_renorm");
    }
}
