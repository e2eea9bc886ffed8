//! Finite-difference reference eigensolver for `-Laplacian + W` with Neumann
//! conditions on `[0,1]^2` (or `[0,1]`), for potentials of the first two
//! coordinates only.
//!
//! The grid has `N + 1` nodes per axis. The Laplacian uses the 5-point
//! stencil, with the Neumann condition closed by mirror (ghost) nodes, which
//! doubles the inward coupling on boundary rows. The resulting operator `L`
//! annihilates constants and is self-adjoint for the trapezoid inner product
//! `<x, y>_M = sum_k m_k x_k y_k`, so `K = M L` is symmetric.
//!
//! The smallest eigenpair comes from shift-and-invert power iteration with a
//! shift below the Gershgorin bound `min W`; each inverse step solves the
//! symmetric positive definite system `(K - s M) x = M u` by Jacobi
//! preconditioned conjugate gradients.
//!
//! # Reference file format
//!
//! ```text
//! spectralflow-reference v1
//! dim <1|2>
//! n <N>
//! lambda <eigenvalue>
//! residual <eigen-residual>
//! potential <potential string>
//! <u_k>            ((N+1)^dim lines, x1 slowest)
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::TrialFunction;
use crate::functionals::QuadratureSet;
use crate::potentials::PotentialSpec;

pub const MIN_GRID: usize = 8;
pub const MAX_GRID: usize = 512;

const FILE_MAGIC: &str = "spectralflow-reference v1";
const PARALLEL_ROWS: usize = 1 << 14;

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, v)| v)).collect()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let row = |(i, yi): (usize, &mut f64)| *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        if self.n >= PARALLEL_ROWS {
            y.par_iter_mut().enumerate().for_each(row);
        } else {
            y.iter_mut().enumerate().for_each(row);
        }
    }
}

/// Mirror-closed finite-difference Schrödinger operator.
#[derive(Debug, Clone)]
pub struct FdOperator {
    dim: usize,
    intervals: usize,
    /// `L`, row sums of its Laplacian part are zero.
    matrix: CsrMatrix,
    /// Trapezoid weights, summing to one.
    weights: Vec<f64>,
    potential_values: Vec<f64>,
    potential: PotentialSpec,
}

impl FdOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn potential_values(&self) -> &[f64] {
        &self.potential_values
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.matrix.matvec(x, &mut y);
        y
    }

    /// Laplacian part only (`L` minus the potential diagonal).
    pub fn apply_laplacian(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply(x);
        for ((yi, xi), wi) in y.iter_mut().zip(x).zip(&self.potential_values) {
            *yi -= wi * xi;
        }
        y
    }

    /// `<x, y>_M`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.weights.iter().zip(x).zip(y).map(|((m, a), b)| m * a * b).sum()
    }

    /// Rayleigh quotient `<L x, x>_M / <x, x>_M`.
    pub fn rayleigh(&self, x: &[f64]) -> f64 {
        self.inner(&self.apply(x), x) / self.inner(x, x)
    }

    /// Lower bound on the spectrum (Gershgorin discs of `L`).
    pub fn gershgorin_lower_bound(&self) -> f64 {
        let diag = self.matrix.diagonal();
        (0..self.len())
            .map(|i| {
                let off: f64 = self.matrix.row(i).filter(|&(j, _)| j != i).map(|(_, v)| v.abs()).sum();
                diag[i] - off
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Node coordinates of flat index `k`.
    pub fn node(&self, k: usize) -> Vec<f64> {
        let n1 = self.intervals + 1;
        let h = 1.0 / self.intervals as f64;
        match self.dim {
            1 => vec![k as f64 * h],
            _ => vec![(k / n1) as f64 * h, (k % n1) as f64 * h],
        }
    }
}

/// Assembles the 2D operator on an `(N+1)^2` node grid.
pub fn assemble_fd(intervals: usize, potential: &PotentialSpec) -> Result<FdOperator> {
    assemble(2, intervals, potential)
}

/// Assembles the 1D or 2D operator.
pub fn assemble(dim: usize, intervals: usize, potential: &PotentialSpec) -> Result<FdOperator> {
    if !(1..=2).contains(&dim) {
        return Err(Error::Domain(format!("finite-difference reference supports dim 1 or 2, got {dim}")));
    }
    if !(MIN_GRID..=MAX_GRID).contains(&intervals) {
        return Err(Error::Domain(format!("grid size must be in [{MIN_GRID}, {MAX_GRID}], got {intervals}")));
    }
    potential.check_dimension(dim)?;
    let n1 = intervals + 1;
    let h = 1.0 / intervals as f64;
    let inv_h2 = 1.0 / (h * h);
    let total = n1.pow(dim as u32);

    let axis_weight = |i: usize| if i == 0 || i == intervals { 0.5 * h } else { h };
    let index = |c: &[usize]| c.iter().fold(0, |acc, &i| acc * n1 + i);

    let mut row_ptr = Vec::with_capacity(total + 1);
    let mut cols = Vec::with_capacity(total * (2 * dim + 1));
    let mut vals = Vec::with_capacity(total * (2 * dim + 1));
    let mut weights = Vec::with_capacity(total);
    let mut potential_values = Vec::with_capacity(total);
    row_ptr.push(0);
    for k in 0..total {
        let coords: Vec<usize> = if dim == 1 { vec![k] } else { vec![k / n1, k % n1] };
        let x: Vec<f64> = coords.iter().map(|&i| i as f64 * h).collect();
        let w = potential.eval(&x);
        let mut entries: Vec<(usize, f64)> = vec![(k, 2.0 * dim as f64 * inv_h2 + w)];
        for axis in 0..dim {
            let i = coords[axis];
            let mut neighbor = |ii: usize, coef: f64| {
                let mut c = coords.clone();
                c[axis] = ii;
                entries.push((index(&c), coef));
            };
            if i == 0 {
                neighbor(1, -2.0 * inv_h2);
            } else if i == intervals {
                neighbor(intervals - 1, -2.0 * inv_h2);
            } else {
                neighbor(i - 1, -inv_h2);
                neighbor(i + 1, -inv_h2);
            }
        }
        entries.sort_by_key(|&(j, _)| j);
        for (j, v) in entries {
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
        weights.push(coords.iter().map(|&i| axis_weight(i)).product());
        potential_values.push(w);
    }
    Ok(FdOperator {
        dim,
        intervals,
        matrix: CsrMatrix { n: total, row_ptr, cols, vals },
        weights,
        potential_values,
        potential: *potential,
    })
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned CG for `(M L - s M) x = b`, warm-started from `x`.
fn solve_shifted(op: &FdOperator, shift: f64, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> Result<CgReport> {
    let n = op.len();
    let m = &op.weights;
    let diag: Vec<f64> = op.matrix.diagonal().iter().zip(m).map(|(d, mi)| mi * (d - shift)).collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        op.matrix.matvec(v, out);
        for i in 0..n {
            out[i] = m[i] * (out[i] - shift * v[i]);
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgReport { iterations: 0, relative_residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let res = dot(&r, &r).sqrt() / b_norm;
        if res <= rel_tol {
            return Ok(CgReport { iterations: it, relative_residual: res });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver(format!("CG lost positive definiteness at iteration {it} (p^T A p = {pap:e})")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = dot(&r, &r).sqrt() / b_norm;
    Err(Error::Solver(format!("CG did not converge in {max_iter} iterations (relative residual {res:e}, target {rel_tol:e})")))
}

/// Smallest eigenpair of an assembled operator.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub lambda: f64,
    /// Nodal values with `||u||_M = 1` and nonnegative mean.
    pub u: Vec<f64>,
    /// `||L u - lambda u||_M`.
    pub residual: f64,
    pub outer_iterations: usize,
    pub cg_iterations: usize,
}

/// Shift-and-invert power iteration until `||L u - lambda u||_M <= tol`.
pub fn ground_eigenpair(op: &FdOperator, tol: f64) -> Result<Eigenpair> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("eigen tolerance must be positive, got {tol}")));
    }
    const MAX_OUTER: usize = 1000;
    let n = op.len();
    let bound = op.gershgorin_lower_bound();
    let shift = bound - 1.0_f64.max(1e-3 * bound.abs());
    let cg_tol = (1e-3 * tol).min(1e-11);
    let max_cg = 20 * n + 1000;

    let mut u = vec![1.0; n];
    let mut cg_total = 0;
    let mut lambda = op.rayleigh(&u);
    let mut residual = eigen_residual(op, &u, lambda);
    for outer in 0..MAX_OUTER {
        if residual <= tol {
            return Ok(finish(op, u, lambda, residual, outer, cg_total));
        }
        let b: Vec<f64> = u.iter().zip(&op.weights).map(|(u, m)| m * u).collect();
        let mut x: Vec<f64> = u.iter().map(|v| v / (lambda - shift)).collect();
        let rep = solve_shifted(op, shift, &b, &mut x, cg_tol, max_cg)
            .map_err(|e| Error::Solver(format!("inverse iteration {outer}: {e}")))?;
        cg_total += rep.iterations;
        let norm = op.inner(&x, &x).sqrt();
        u = x.into_iter().map(|v| v / norm).collect();
        lambda = op.rayleigh(&u);
        residual = eigen_residual(op, &u, lambda);
    }
    Err(Error::Solver(format!("inverse iteration stalled after {MAX_OUTER} steps (residual {residual:e}, target {tol:e})")))
}

fn eigen_residual(op: &FdOperator, u: &[f64], lambda: f64) -> f64 {
    let lu = op.apply(u);
    let r: Vec<f64> = lu.iter().zip(u).map(|(a, b)| a - lambda * b).collect();
    (op.inner(&r, &r) / op.inner(u, u)).sqrt()
}

fn finish(op: &FdOperator, mut u: Vec<f64>, lambda: f64, residual: f64, outer: usize, cg: usize) -> Eigenpair {
    let norm = op.inner(&u, &u).sqrt();
    let sign = if u.iter().zip(&op.weights).map(|(u, m)| u * m).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    u.iter_mut().for_each(|v| *v *= sign / norm);
    Eigenpair { lambda, u, residual, outer_iterations: outer, cg_iterations: cg }
}

/// Reference eigenpair on a 2D (or 1D) node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub dim: usize,
    pub intervals: usize,
    pub lambda: f64,
    pub residual: f64,
    pub potential: PotentialSpec,
    /// Nodal values, trapezoid `L^2` norm one, `x1` slowest.
    pub u_grid: Vec<f64>,
}

/// Default eigen-residual target.
pub const DEFAULT_TOL: f64 = 1e-8;

impl ReferenceSolution {
    /// Assembles and solves the 2D problem for `potential`.
    pub fn solve(potential: &PotentialSpec, intervals: usize, tol: f64) -> Result<Self> {
        let op = assemble_fd(intervals, potential)?;
        let pair = ground_eigenpair(&op, tol)?;
        Ok(Self {
            dim: 2,
            intervals,
            lambda: pair.lambda,
            residual: pair.residual,
            potential: *potential,
            u_grid: pair.u,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = format!(
            "{FILE_MAGIC}\ndim {}\nn {}\nlambda {:?}\nresidual {:?}\npotential {}\n",
            self.dim, self.intervals, self.lambda, self.residual, self.potential
        );
        for v in &self.u_grid {
            s.push_str(&format!("{v:?}\n"));
        }
        fs::write(path, s)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let fail = |line: usize, message: String| Error::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = || lines.next().ok_or_else(|| fail(0, "unexpected end of file".into()));
        let (l, magic) = next()?;
        if magic != FILE_MAGIC {
            return Err(fail(l, format!("expected {FILE_MAGIC:?}")));
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (l, s) = next()?;
            match s.split_once(' ') {
                Some((k, v)) if k == key => Ok((l, v.trim().to_string())),
                _ => Err(fail(l, format!("expected `{key} <value>`"))),
            }
        };
        let (l, v) = field("dim")?;
        let dim: usize = v.parse().map_err(|_| fail(l, "invalid dim".into()))?;
        let (l, v) = field("n")?;
        let intervals: usize = v.parse().map_err(|_| fail(l, "invalid n".into()))?;
        let (l, v) = field("lambda")?;
        let lambda: f64 = v.parse().map_err(|_| fail(l, "invalid lambda".into()))?;
        let (l, v) = field("residual")?;
        let residual: f64 = v.parse().map_err(|_| fail(l, "invalid residual".into()))?;
        let (l, v) = field("potential")?;
        let potential: PotentialSpec = v.parse().map_err(|e| fail(l, format!("{e}")))?;
        if !(1..=2).contains(&dim) || intervals == 0 {
            return Err(fail(0, "bad grid header".into()));
        }
        let count = (intervals + 1).pow(dim as u32);
        let mut u_grid = Vec::with_capacity(count);
        for _ in 0..count {
            let (l, s) = next()?;
            u_grid.push(s.parse::<f64>().map_err(|_| fail(l, "invalid value".into()))?);
        }
        Ok(Self { dim, intervals, lambda, residual, potential, u_grid })
    }

    /// Evaluator on `[0,1]^d`: bilinear in `(x1, x2)`, constant in the
    /// remaining coordinates. `lambda` is unchanged by the extension since
    /// the transverse directions contribute their constant Neumann mode.
    pub fn extend_to_d(&self, d: usize) -> Result<ReferenceField<'_>> {
        if d == 0 {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        if d < self.potential.coordinates_used() {
            return Err(Error::Domain(format!("potential {} needs d >= {}", self.potential, self.potential.coordinates_used())));
        }
        Ok(ReferenceField { solution: self, d })
    }
}

/// Grid interpolant of a [`ReferenceSolution`] in dimension `d`.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceField<'a> {
    solution: &'a ReferenceSolution,
    d: usize,
}

impl ReferenceField<'_> {
    fn cell(&self, x: f64) -> (usize, f64) {
        let n = self.solution.intervals;
        let s = x.clamp(0.0, 1.0) * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        (i, s - i as f64)
    }
}

impl TrialFunction for ReferenceField<'_> {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.d];
        self.value_grad(x, &mut g)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let sol = self.solution;
        let n = sol.intervals as f64;
        let (i, t) = self.cell(x[0]);
        if sol.dim == 1 {
            let (u0, u1) = (sol.u_grid[i], sol.u_grid[i + 1]);
            grad[0] = n * (u1 - u0);
            return (1.0 - t) * u0 + t * u1;
        }
        let (j, s) = if self.d >= 2 { self.cell(x[1]) } else { (0, 0.0) };
        let n1 = sol.intervals + 1;
        let at = |a: usize, b: usize| sol.u_grid[a * n1 + b];
        let (u00, u10, u01, u11) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
        grad[0] = n * ((1.0 - s) * (u10 - u00) + s * (u11 - u01));
        if self.d >= 2 {
            grad[1] = n * ((1.0 - t) * (u01 - u00) + t * (u11 - u10));
        }
        (1.0 - t) * (1.0 - s) * u00 + t * (1.0 - s) * u10 + (1.0 - t) * s * u01 + t * s * u11
    }
}

/// Sign-aligned `L^2` distance `min_s ||u - s u_ref||` on a quadrature set.
pub fn l2_error(u: &impl TrialFunction, reference: &impl TrialFunction, q: &QuadratureSet) -> Result<f64> {
    if u.dim() != q.dim() || reference.dim() != q.dim() {
        return Err(Error::Domain("dimension mismatch in l2_error".into()));
    }
    let (mut plus, mut minus) = (0.0, 0.0);
    for (x, w) in q.points().zip(q.weights()) {
        let (a, b) = (u.value(x), reference.value(x));
        plus += w * (a - b) * (a - b);
        minus += w * (a + b) * (a + b);
    }
    Ok(plus.min(minus).sqrt())
}

/// Richardson analysis of eigenvalues on grids `N`, `2N`, `4N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Richardson {
    /// Observed order `log2((l_N - l_2N) / (l_2N - l_4N))`; NaN when degenerate.
    pub order: f64,
    pub extrapolated: f64,
    /// Set when the successive differences vanish or change sign.
    pub degenerate: bool,
}

pub fn richardson(coarse: f64, mid: f64, fine: f64) -> Richardson {
    let d1 = coarse - mid;
    let d2 = mid - fine;
    let scale = fine.abs().max(1.0);
    if d1.abs() <= 1e-14 * scale || d2.abs() <= 1e-14 * scale || d1 / d2 <= 1.0 {
        return Richardson { order: f64::NAN, extrapolated: fine, degenerate: true };
    }
    let order = (d1 / d2).log2();
    let extrapolated = fine - d2 / (2f64.powf(order) - 1.0);
    Richardson { order, extrapolated, degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn laplacian_annihilates_constants() {
        let op = assemble_fd(16, &PotentialSpec::Zero).unwrap();
        let ones = vec![1.0; op.len()];
        assert!(op.apply(&ones).iter().all(|&v| v == 0.0));
        let op = assemble_fd(16, &PotentialSpec::Cos1d(100.0)).unwrap();
        assert!(op.apply_laplacian(&ones).iter().all(|&v| v.abs() < 1e-9));
        assert!((op.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(assemble_fd(4, &PotentialSpec::Zero).is_err());
    }

    #[test]
    fn operator_is_self_adjoint_in_trapezoid_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = assemble_fd(20, &PotentialSpec::ExpDiag(100.0)).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..op.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..op.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (lhs, rhs) = (op.inner(&op.apply(&x), &y), op.inner(&x, &op.apply(&y)));
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn trivial_potentials_are_exact() {
        let op = assemble_fd(32, &PotentialSpec::Zero).unwrap();
        let pair = ground_eigenpair(&op, 1e-10).unwrap();
        assert!(pair.lambda.abs() < 1e-10);
        assert!(pair.u.iter().all(|v| (v - 1.0).abs() < 1e-8));

        let op = assemble_fd(32, &PotentialSpec::Constant(-7.5)).unwrap();
        let pair = ground_eigenpair(&op, 1e-10).unwrap();
        assert!((pair.lambda + 7.5).abs() < 1e-10);
    }

    #[test]
    fn second_eigenvalue_of_1d_laplacian_converges_to_pi_squared() {
        // Dense oracle: eigenvalues of M^{1/2} L M^{-1/2}.
        let second = |n: usize| {
            let op = assemble(1, n, &PotentialSpec::Zero).unwrap();
            let size = op.len();
            let mut dense = nalgebra::DMatrix::<f64>::zeros(size, size);
            for j in 0..size {
                let mut e = vec![0.0; size];
                e[j] = 1.0;
                let col = op.apply(&e);
                for i in 0..size {
                    dense[(i, j)] = op.weights()[i].sqrt() * col[i] / op.weights()[j].sqrt();
                }
            }
            let sym = 0.5 * (&dense + dense.transpose());
            let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(ev[0].abs() < 1e-8);
            ev[1]
        };
        let pi2 = std::f64::consts::PI.powi(2);
        let errs: Vec<f64> = [64, 128, 256].iter().map(|&n| (second(n) - pi2).abs()).collect();
        assert!(errs[2] < 1e-3);
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
        }
    }

    #[test]
    fn ground_eigenvalue_bounds_rayleigh_quotients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let op = assemble_fd(32, &PotentialSpec::Cos1d(100.0)).unwrap();
        let pair = ground_eigenpair(&op, 1e-9).unwrap();
        assert!(pair.residual <= 1e-9);
        assert!((op.inner(&pair.u, &pair.u) - 1.0).abs() < 1e-10);
        for _ in 0..20 {
            let x: Vec<f64> = (0..op.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(pair.lambda <= op.rayleigh(&x));
        }
    }

    #[test]
    fn richardson_cases() {
        // lambda_N = 3 + 1/N^2
        let f = |n: f64| 3.0 + 1.0 / (n * n);
        let r = richardson(f(8.0), f(16.0), f(32.0));
        assert!((r.order - 2.0).abs() < 1e-10);
        assert!((r.extrapolated - 3.0).abs() < 1e-12);
        let c = richardson(4.0, 4.0, 4.0);
        assert!(c.degenerate);
        assert_eq!(c.extrapolated, 4.0);
    }

    #[test]
    fn file_round_trip_and_extension() {
        let sol = ReferenceSolution::solve(&PotentialSpec::Cos1d(10.0), 16, 1e-10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.txt");
        sol.write(&path).unwrap();
        let back = ReferenceSolution::read(&path).unwrap();
        assert_eq!(back, sol);

        let f2 = sol.extend_to_d(2).unwrap();
        for k in [0, 5, 17, 200, sol.u_grid.len() - 1] {
            let x = [(k / 17) as f64 / 16.0, (k % 17) as f64 / 16.0];
            assert!((f2.value(&x) - sol.u_grid[k]).abs() < 1e-14);
        }
        let f8 = sol.extend_to_d(8).unwrap();
        let x8 = [0.3, 0.6, 0.1, 0.9, 0.2, 0.2, 0.5, 0.7];
        assert_eq!(f8.value(&x8), f2.value(&[0.3, 0.6]));

        let constant = ReferenceSolution { u_grid: vec![1.0; sol.u_grid.len()], ..sol.clone() };
        let c8 = constant.extend_to_d(8).unwrap();
        assert!((c8.value(&x8) - 1.0).abs() < 1e-15);
        assert!(ReferenceSolution::read(dir.path().join("missing")).is_err());
    }

    #[test]
    fn l2_error_is_sign_aligned() {
        let sol = ReferenceSolution::solve(&PotentialSpec::Cos1d(50.0), 32, 1e-10).unwrap();
        let f = sol.extend_to_d(2).unwrap();
        let q = QuadratureSet::tensor_grid(2, 32).unwrap();
        assert!(l2_error(&f, &f, &q).unwrap() < 1e-14);
        let neg = crate::field::AnalyticFunction {
            dim: 2,
            value: |x: &[f64]| -f.value(x),
            gradient: |x: &[f64], g: &mut [f64]| {
                f.value_grad(x, g);
                g.iter_mut().for_each(|v| *v = -*v);
            },
        };
        assert!(l2_error(&neg, &f, &q).unwrap() < 1e-14);
    }
}
