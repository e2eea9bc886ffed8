//! The parameter manifold `R x S^{d-1} x R`.

use crate::error::{Error, Result};

/// One feature `(a, w, b)`: outer weight, unit direction, bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub a: f64,
    pub w: Vec<f64>,
    pub b: f64,
}

impl Particle {
    /// Builds a particle, normalizing `w` onto the unit sphere.
    pub fn new(a: f64, w: Vec<f64>, b: f64) -> Result<Self> {
        let n = norm(&w);
        if w.is_empty() || !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("particle direction must be a nonzero finite vector".into()));
        }
        let w = w.into_iter().map(|x| x / n).collect();
        Ok(Self { a, w, b })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `w . x + b`.
    #[inline]
    pub fn preactivation(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    fn renormalize(&mut self) {
        let n = norm(&self.w);
        for x in &mut self.w {
            *x /= n;
        }
    }
}

/// Tangent vector at a particle; `dw` is orthogonal to the base direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub da: f64,
    pub dw: Vec<f64>,
    pub db: f64,
}

impl TangentVector {
    pub fn zero(d: usize) -> Self {
        Self { da: 0.0, dw: vec![0.0; d], db: 0.0 }
    }

    pub fn dot(&self, other: &TangentVector) -> f64 {
        self.da * other.da + dot(&self.dw, &other.dw) + self.db * other.db
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { da: c * self.da, dw: self.dw.iter().map(|x| c * x).collect(), db: c * self.db }
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &TangentVector) -> Self {
        Self {
            da: self.da + c * other.da,
            dw: self.dw.iter().zip(&other.dw).map(|(x, y)| x + c * y).collect(),
            db: self.db + c * other.db,
        }
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Great-circle distance between unit vectors, `2 asin(|w - v| / 2)`.
/// Same angle as `acos(w . v)` but exact at `w = v` and well conditioned
/// for small separations.
pub fn sphere_distance(w: &[f64], v: &[f64]) -> f64 {
    let chord = w.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    2.0 * (0.5 * chord).min(1.0).asin()
}

/// Product-metric geodesic distance on `R x S^{d-1} x R`.
pub fn geodesic_distance(p: &Particle, q: &Particle) -> f64 {
    let da = p.a - q.a;
    let dw = sphere_distance(&p.w, &q.w);
    let db = p.b - q.b;
    (da * da + dw * dw + db * db).sqrt()
}

/// Euclidean gradient in `R^{d+2}` of a function of `(a, w, b)`, before
/// projection onto the tangent space.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientGradient {
    pub da: f64,
    pub dw: Vec<f64>,
    pub db: f64,
}

/// Projects an ambient gradient onto the tangent space at `p`: the `w`
/// block loses its component along `p.w`.
pub fn tangent_project(p: &Particle, g: &AmbientGradient) -> TangentVector {
    let c = dot(&g.dw, &p.w);
    let dw = g.dw.iter().zip(&p.w).map(|(g, w)| g - c * w).collect();
    TangentVector { da: g.da, dw, db: g.db }
}

/// Exponential map: moves `p` along the geodesic with initial velocity
/// `step * v`. The direction is renormalized afterwards.
pub fn exp_map(p: &Particle, v: &TangentVector, step: f64) -> Particle {
    let mut out = p.clone();
    exp_map_in_place(&mut out, v, step);
    out
}

pub(crate) fn exp_map_in_place(p: &mut Particle, v: &TangentVector, step: f64) {
    p.a += step * v.da;
    p.b += step * v.db;
    let speed = norm(&v.dw);
    let s = step * speed;
    if speed > 0.0 && s != 0.0 {
        let (sin, cos) = s.sin_cos();
        for (w, dw) in p.w.iter_mut().zip(&v.dw) {
            *w = cos * *w + sin * dw / speed;
        }
        p.renormalize();
    }
}

/// Radius of the smallest box `[-r, r] x S^{d-1} x [-r, r]` holding every particle.
pub fn support_box_radius(particles: &[Particle]) -> Result<f64> {
    if particles.is_empty() {
        return Err(Error::Domain("support radius of an empty ensemble".into()));
    }
    Ok(particles.iter().map(|p| p.a.abs().max(p.b.abs())).fold(0.0, f64::max))
}

/// Largest ensemble size accepted by [`wasserstein2`].
pub const W2_MAX_PARTICLES: usize = 512;

/// Exact 2-Wasserstein distance between two uniformly weighted ensembles of
/// equal size, via an optimal assignment under squared geodesic cost.
pub fn wasserstein2(a: &[Particle], b: &[Particle]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!("wasserstein2 needs equal sizes, got {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Domain("wasserstein2 of empty ensembles".into()));
    }
    if a.len() > W2_MAX_PARTICLES {
        return Err(Error::Domain(format!("wasserstein2 limited to {W2_MAX_PARTICLES} particles")));
    }
    let m = a.len();
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let d = geodesic_distance(p, q);
                    d * d
                })
                .collect()
        })
        .collect();
    let assignment = crate::assignment::solve(&cost);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((total / m as f64).sqrt())
}
