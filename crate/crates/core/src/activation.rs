//! Hat-ReLU activation and its mollified family.
//!
//! The mollifier is the compactly supported bump
//! `rho(y) = Z exp(-tan(pi y / 2)^2 / 2)` on `[-1, 1]`, and the mollified
//! ReLU is `sigma_tau = (tau rho(tau .)) * relu`. Substituting `s = tau y`
//! gives `sigma_tau(y) = G(tau y) / tau` with
//!
//! ```text
//! G(s) = int_{-1}^{s} (s - t) rho(t) dt = s CDF(s) - M(s),   M(s) = int_{-1}^{s} t rho(t) dt,
//! ```
//!
//! so `G' = CDF` and `G'' = rho`. The table stores `rho`, `CDF` and `G` on a
//! uniform grid over `[-1, 1]`; `G` and `CDF` are read back with cubic Hermite
//! interpolation using their exact derivatives `CDF` and `rho`, which keeps the
//! three returned derivatives mutually consistent to `O(h^3)`.

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Smallest accepted table resolution.
pub const MIN_RESOLUTION: usize = 64;

/// Resolution of [`MollifierTable::shared`].
pub const DEFAULT_RESOLUTION: usize = 4096;

/// Unnormalized mollifier, with the removable limit 0 at `|y| = 1`.
fn bump(y: f64) -> f64 {
    let y = y.abs();
    if y >= 1.0 {
        return 0.0;
    }
    let t = (FRAC_PI_2 * y).tan();
    (-0.5 * t * t).exp()
}

/// Tabulated mollifier `rho`, its CDF and the antiderivative `G` of the CDF.
#[derive(Debug, Clone)]
pub struct MollifierTable {
    z: f64,
    resolution: usize,
    h: f64,
    y: Vec<f64>,
    rho: Vec<f64>,
    cdf: Vec<f64>,
    g: Vec<f64>,
}

impl MollifierTable {
    /// Builds the table with `resolution` uniform intervals on `[-1, 1]`.
    ///
    /// `resolution` must be even (so that `y = 0` is a node) and at least
    /// [`MIN_RESOLUTION`]. All integrals use composite Simpson per table cell
    /// accumulated outward from 0, which makes the table exactly symmetric.
    pub fn build(resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::Config(format!(
                "mollifier resolution {resolution} below minimum {MIN_RESOLUTION}"
            )));
        }
        if !resolution.is_multiple_of(2) {
            return Err(Error::Config(format!("mollifier resolution {resolution} must be even")));
        }
        let half = resolution / 2;
        let h = 2.0 / resolution as f64;

        // Running integrals of bump(t) and t*bump(t) from 0 to s_j = j*h.
        let mut i0 = vec![0.0; half + 1];
        let mut i1 = vec![0.0; half + 1];
        for j in 0..half {
            let (l, r) = (j as f64 * h, (j + 1) as f64 * h);
            let c = 0.5 * (l + r);
            let (fl, fc, fr) = (bump(l), bump(c), bump(r));
            i0[j + 1] = i0[j] + h / 6.0 * (fl + 4.0 * fc + fr);
            i1[j + 1] = i1[j] + h / 6.0 * (l * fl + 4.0 * c * fc + r * fr);
        }
        let z = 0.5 / i0[half];
        let first_moment_tail = i1[half];

        let n = resolution + 1;
        let mut y = Vec::with_capacity(n);
        let mut rho = Vec::with_capacity(n);
        let mut cdf = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for k in 0..n {
            let (j, sign) = if k >= half { (k - half, 1.0) } else { (half - k, -1.0) };
            let yk = sign * j as f64 * h;
            let c = 0.5 + sign * z * i0[j];
            // M(y) = -int_{|y|}^{1} t rho(t) dt, even in y.
            let m = -z * (first_moment_tail - i1[j]);
            y.push(yk);
            rho.push(z * bump(yk));
            cdf.push(c);
            g.push(yk * c - m);
        }
        // Pin the exact endpoint values the closed forms imply.
        cdf[0] = 0.0;
        cdf[resolution] = 1.0;
        g[0] = 0.0;
        g[resolution] = 1.0;
        Ok(Self { z, resolution, h, y, rho, cdf, g })
    }

    /// Process-wide table at [`DEFAULT_RESOLUTION`].
    pub fn shared() -> &'static MollifierTable {
        static TABLE: OnceLock<MollifierTable> = OnceLock::new();
        TABLE.get_or_init(|| MollifierTable::build(DEFAULT_RESOLUTION).expect("default resolution is valid"))
    }

    /// Normalization constant `Z`.
    pub fn normalization(&self) -> f64 {
        self.z
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn nodes(&self) -> &[f64] {
        &self.y
    }

    pub fn rho_samples(&self) -> &[f64] {
        &self.rho
    }

    pub fn cdf_samples(&self) -> &[f64] {
        &self.cdf
    }

    /// Mollifier density, evaluated in closed form.
    pub fn rho(&self, y: f64) -> f64 {
        self.z * bump(y)
    }

    /// Largest value of `rho`, attained at 0.
    pub fn rho_max(&self) -> f64 {
        self.z
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let u = (s + 1.0) / self.h;
        let k = (u.floor() as usize).min(self.resolution - 1);
        (k, u - k as f64)
    }

    /// `CDF(s) = int_{-1}^{s} rho`, clamped to 0 and 1 outside `[-1, 1]`.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= -1.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        let (k, t) = self.locate(s);
        hermite(t, self.h, self.cdf[k], self.cdf[k + 1], self.rho[k], self.rho[k + 1])
    }

    /// `G(s) = int_{-1}^{s} CDF`; equals 0 below -1 and `s` above 1.
    pub fn antiderivative(&self, s: f64) -> f64 {
        if s <= -1.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return s;
        }
        let (k, t) = self.locate(s);
        hermite(t, self.h, self.g[k], self.g[k + 1], self.cdf[k], self.cdf[k + 1])
    }
}

/// Cubic Hermite interpolation on one cell of width `h` at fraction `t`.
#[inline]
fn hermite(t: f64, h: f64, f0: f64, f1: f64, d0: f64, d1: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1
}

/// Value and first two derivatives of the mollified hat activation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActivationEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Exact hat ReLU `relu(y+1) - relu(2y) + relu(y-1)`.
pub fn hrelu(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else if y <= 0.0 {
        1.0 + y
    } else {
        1.0 - y
    }
}

/// Derivative of [`hrelu`], right-continuous at the kinks.
pub fn hrelu_derivative(y: f64) -> f64 {
    if (-1.0..0.0).contains(&y) {
        1.0
    } else if (0.0..1.0).contains(&y) {
        -1.0
    } else {
        0.0
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("mollification parameter tau must be positive and finite, got {tau}")))
    }
}

/// Mollified ReLU `sigma_tau(y)`.
pub fn softplus_tau(y: f64, tau: f64, table: &MollifierTable) -> Result<f64> {
    check_tau(tau)?;
    Ok(Activation { table, tau }.softplus(y))
}

/// Mollified hat activation with first and second derivatives.
pub fn hrelu_tau(y: f64, tau: f64, table: &MollifierTable) -> Result<ActivationEval> {
    Ok(Activation::new(tau, table)?.eval(y))
}

/// Mollified hat activation at a fixed `tau`, bound to a table.
#[derive(Debug, Clone, Copy)]
pub struct Activation<'t> {
    table: &'t MollifierTable,
    tau: f64,
}

impl<'t> Activation<'t> {
    pub fn new(tau: f64, table: &'t MollifierTable) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self { table, tau })
    }

    /// Activation backed by [`MollifierTable::shared`].
    pub fn shared(tau: f64) -> Result<Activation<'static>> {
        Activation::new(tau, MollifierTable::shared())
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn table(&self) -> &'t MollifierTable {
        self.table
    }

    /// Half-width of the support: the activation vanishes for `|y| >= 1 + 1/tau`.
    pub fn support_radius(&self) -> f64 {
        1.0 + 1.0 / self.tau
    }

    #[inline]
    fn softplus(&self, y: f64) -> f64 {
        let s = self.tau * y;
        if s <= -1.0 {
            0.0
        } else if s >= 1.0 {
            y
        } else {
            self.table.antiderivative(s) / self.tau
        }
    }

    #[inline]
    fn softplus_d1(&self, y: f64) -> f64 {
        self.table.cdf(self.tau * y)
    }

    #[inline]
    fn softplus_d2(&self, y: f64) -> f64 {
        self.tau * self.table.rho(self.tau * y)
    }

    /// Value only.
    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        if y.abs() >= self.support_radius() {
            return 0.0;
        }
        self.softplus(y + 1.0) - self.softplus(2.0 * y) + self.softplus(y - 1.0)
    }

    /// Value and first derivative.
    #[inline]
    pub fn value_d1(&self, y: f64) -> (f64, f64) {
        if y.abs() >= self.support_radius() {
            return (0.0, 0.0);
        }
        (
            self.softplus(y + 1.0) - self.softplus(2.0 * y) + self.softplus(y - 1.0),
            self.softplus_d1(y + 1.0) - 2.0 * self.softplus_d1(2.0 * y) + self.softplus_d1(y - 1.0),
        )
    }

    #[inline]
    pub fn eval(&self, y: f64) -> ActivationEval {
        if y.abs() >= self.support_radius() {
            return ActivationEval::default();
        }
        let (value, d1) = self.value_d1(y);
        let d2 = self.softplus_d2(y + 1.0) - 4.0 * self.softplus_d2(2.0 * y) + self.softplus_d2(y - 1.0);
        ActivationEval { value, d1, d2 }
    }
}

/// Numerical `H^1(R)` norm of `hrelu - hrelu_tau` by the trapezoid rule on
/// `[-3, 3]` with `grid_n` intervals. Requires `tau >= 1` (so the difference
/// vanishes outside the window) and `grid_n >= 1000`.
pub fn h1_gap(tau: f64, grid_n: usize, table: &MollifierTable) -> Result<f64> {
    if !(tau >= 1.0) {
        return Err(Error::Domain(format!("h1_gap needs tau >= 1, got {tau}")));
    }
    if grid_n < 1000 {
        return Err(Error::Domain(format!("h1_gap needs grid_n >= 1000, got {grid_n}")));
    }
    let act = Activation::new(tau, table)?;
    let (lo, hi) = (-3.0, 3.0);
    let dx = (hi - lo) / grid_n as f64;
    let mut acc = 0.0;
    for k in 0..=grid_n {
        let y = lo + k as f64 * dx;
        let (v, d1) = act.value_d1(y);
        let e0 = hrelu(y) - v;
        let e1 = hrelu_derivative(y) - d1;
        let w = if k == 0 || k == grid_n { 0.5 } else { 1.0 };
        acc += w * (e0 * e0 + e1 * e1);
    }
    Ok((acc * dx).sqrt())
}
