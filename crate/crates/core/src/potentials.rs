//! Benchmark potentials `W : [0,1]^d -> R`.
//!
//! Selected by a short string: `zero`, `constant:<c>`, `cos1d:<A>`,
//! `cos_diag:<A>`, `exp_diag:<A>`, `double_well:<A>`. The amplitude may be
//! omitted for the benchmark variants, in which case it defaults to 100.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_AMPLITUDE: f64 = 100.0;

/// Distance from the double-well pole below which the value is the
/// continuous extension 0.
const DOUBLE_WELL_POLE_WIDTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialSpec {
    Zero,
    Constant(f64),
    /// `A cos(2 pi x1)`
    Cos1d(f64),
    /// `-A cos(2 pi (x1 - x2))`
    CosDiag(f64),
    /// `-A exp(-(x1 - x2)^2 / 2)`
    ExpDiag(f64),
    /// `A exp(-g(x1))`, `g(z) = f(4(z - 1/2))`, `f(z) = (z^2 - 1)^{-2}`
    DoubleWell(f64),
}

impl PotentialSpec {
    /// Number of leading coordinates the potential depends on.
    pub fn coordinates_used(&self) -> usize {
        match self {
            Self::Zero | Self::Constant(_) => 0,
            Self::Cos1d(_) | Self::DoubleWell(_) => 1,
            Self::CosDiag(_) | Self::ExpDiag(_) => 2,
        }
    }

    /// Checks that the variant is defined in dimension `d`.
    pub fn check_dimension(&self, d: usize) -> Result<()> {
        let need = self.coordinates_used().max(1);
        if d < need {
            return Err(Error::Domain(format!("potential {self} needs dimension >= {need}, got {d}")));
        }
        Ok(())
    }

    /// Evaluates `W(x)`. Diagonal variants read `x[1]`, so callers must have
    /// validated the dimension with [`Self::check_dimension`].
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant(c) => c,
            Self::Cos1d(a) => a * (2.0 * PI * x[0]).cos(),
            Self::CosDiag(a) => -a * (2.0 * PI * (x[0] - x[1])).cos(),
            Self::ExpDiag(a) => {
                let t = x[0] - x[1];
                -a * (-0.5 * t * t).exp()
            }
            Self::DoubleWell(a) => {
                let z = 4.0 * (x[0] - 0.5);
                let q = z * z - 1.0;
                if q.abs() <= DOUBLE_WELL_POLE_WIDTH {
                    0.0
                } else {
                    a * (-1.0 / (q * q)).exp()
                }
            }
        }
    }

    /// Bound on `|W|` over the cube.
    pub fn sup_norm_bound(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant(c) => c.abs(),
            Self::Cos1d(a) | Self::CosDiag(a) | Self::ExpDiag(a) | Self::DoubleWell(a) => a.abs(),
        }
    }
}

/// Checked evaluation.
pub fn eval_potential(spec: &PotentialSpec, x: &[f64]) -> Result<f64> {
    spec.check_dimension(x.len())?;
    Ok(spec.eval(x))
}

impl fmt::Display for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "zero"),
            Self::Constant(c) => write!(f, "constant:{c}"),
            Self::Cos1d(a) => write!(f, "cos1d:{a}"),
            Self::CosDiag(a) => write!(f, "cos_diag:{a}"),
            Self::ExpDiag(a) => write!(f, "exp_diag:{a}"),
            Self::DoubleWell(a) => write!(f, "double_well:{a}"),
        }
    }
}

impl FromStr for PotentialSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let amplitude = |default: Option<f64>| -> Result<f64> {
            match (arg, default) {
                (Some(a), _) => {
                    let v: f64 = a.parse().map_err(|_| Error::Config(format!("bad potential parameter {a:?} in {s:?}")))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::Config(format!("potential parameter must be finite in {s:?}")))
                    }
                }
                (None, Some(d)) => Ok(d),
                (None, None) => Err(Error::Config(format!("potential {name:?} needs a parameter"))),
            }
        };
        match name {
            "zero" => match arg {
                None => Ok(Self::Zero),
                Some(_) => Err(Error::Config("potential \"zero\" takes no parameter".into())),
            },
            "constant" => Ok(Self::Constant(amplitude(None)?)),
            "cos1d" => Ok(Self::Cos1d(amplitude(Some(DEFAULT_AMPLITUDE))?)),
            "cos_diag" => Ok(Self::CosDiag(amplitude(Some(DEFAULT_AMPLITUDE))?)),
            "exp_diag" => Ok(Self::ExpDiag(amplitude(Some(DEFAULT_AMPLITUDE))?)),
            "double_well" => Ok(Self::DoubleWell(amplitude(Some(DEFAULT_AMPLITUDE))?)),
            _ => Err(Error::Config(format!("unknown potential {name:?}"))),
        }
    }
}
