//! Sequential quadratic programming for equality- and box-constrained NLPs.
//!
//! Each iteration linearizes the equalities, solves a convex QP with a damped
//! BFGS Hessian by a primal active-set method on the bounds, and globalizes
//! with an l1 exact-penalty merit function and Armijo backtracking. Work is
//! done in scaled variables `z = x / scale`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};

/// An NLP `min f(x)  s.t.  c(x) = 0,  lo <= x <= hi`.
pub trait Nlp {
    fn num_variables(&self) -> usize;
    fn num_equalities(&self) -> usize;
    fn lower_bounds(&self) -> Vec<f64>;
    fn upper_bounds(&self) -> Vec<f64>;
    fn objective(&self, x: &[f64]) -> Result<f64>;
    fn equalities(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn objective_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward_gradient(self, x, 1e-7)
    }

    fn equality_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        forward_jacobian(self, x, 1e-7)
    }

    /// Typical magnitude of every variable.
    fn variable_scale(&self) -> Vec<f64> {
        vec![1.0; self.num_variables()]
    }

    /// Residuals whose least-squares minimization moves iterates off a flat,
    /// violated plateau of the equalities; `None` when not applicable.
    fn restoration_residuals(&self, _x: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
}

fn probe_step(v: f64, rel: f64) -> f64 {
    rel * v.abs().max(1.0)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} produced a non-finite value")))
    }
}

/// Forward-difference objective gradient.
pub fn forward_gradient<N: Nlp + ?Sized>(nlp: &N, x: &[f64], rel: f64) -> Result<Vec<f64>> {
    let f0 = nlp.objective(x)?;
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = probe_step(x[j], rel);
        xp[j] = x[j] + h;
        let h = xp[j] - x[j];
        g.push((nlp.objective(&xp)? - f0) / h);
        xp[j] = x[j];
    }
    check_finite(&g, "objective gradient")?;
    Ok(g)
}

/// Forward-difference equality Jacobian with per-column relative steps.
pub fn forward_jacobian<N: Nlp + ?Sized>(nlp: &N, x: &[f64], rel: f64) -> Result<DMatrix<f64>> {
    let c0 = nlp.equalities(x)?;
    check_finite(&c0, "equality residuals")?;
    let mut jac = DMatrix::zeros(c0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = probe_step(x[j], rel);
        xp[j] = x[j] + h;
        let h = xp[j] - x[j];
        let c = nlp.equalities(&xp)?;
        check_finite(&c, "equality residuals")?;
        for i in 0..c.len() {
            jac[(i, j)] = (c[i] - c0[i]) / h;
        }
        xp[j] = x[j];
    }
    Ok(jac)
}

/// Central-difference equality Jacobian (verification only).
pub fn central_jacobian<N: Nlp + ?Sized>(nlp: &N, x: &[f64], rel: f64) -> Result<DMatrix<f64>> {
    let m = nlp.num_equalities();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = probe_step(x[j], rel);
        xp[j] = x[j] + h;
        let cp = nlp.equalities(&xp)?;
        xp[j] = x[j] - h;
        let cm = nlp.equalities(&xp)?;
        for i in 0..m {
            jac[(i, j)] = (cp[i] - cm[i]) / (2.0 * h);
        }
        xp[j] = x[j];
    }
    check_finite(jac.as_slice(), "central Jacobian")?;
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqpSettings {
    pub max_iterations: usize,
    pub constraint_tolerance: f64,
    pub kkt_tolerance: f64,
    /// Relative step for generic finite differences.
    pub fd_step: f64,
    /// Initial l1 penalty weight.
    pub penalty_initial: f64,
    /// Added to the largest multiplier when the penalty is raised.
    pub penalty_margin: f64,
    pub backtrack_factor: f64,
    pub armijo: f64,
    pub max_line_search: usize,
    pub max_qp_iterations: usize,
    /// Tikhonov weight relative to the largest diagonal of the QP row system.
    pub tikhonov: f64,
    /// Rows whose scaled gradient infinity-norm is below this are left out of the QP.
    pub flat_row_tolerance: f64,
    /// Consecutive non-improving iterations before giving up.
    pub stall_iterations: usize,
    pub max_restorations: usize,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            constraint_tolerance: 1e-6,
            kkt_tolerance: 1e-6,
            fd_step: 1e-7,
            penalty_initial: 1.0,
            penalty_margin: 1.0,
            backtrack_factor: 0.5,
            armijo: 1e-4,
            max_line_search: 40,
            max_qp_iterations: 200,
            tikhonov: 1e-10,
            flat_row_tolerance: 1e-9,
            stall_iterations: 40,
            max_restorations: 5,
        }
    }
}

impl SqpSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("constraint_tolerance", self.constraint_tolerance),
            ("kkt_tolerance", self.kkt_tolerance),
            ("fd_step", self.fd_step),
            ("penalty_initial", self.penalty_initial),
            ("armijo", self.armijo),
            ("tikhonov", self.tikhonov),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Config("backtrack_factor must lie in (0, 1)".into()));
        }
        if self.max_iterations == 0 || self.max_qp_iterations == 0 || self.max_line_search == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqpStatus {
    Converged,
    MaxIterations,
    Stalled(String),
    Aborted(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub merit: f64,
    pub kkt: f64,
    pub step: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqpResult {
    pub x: Vec<f64>,
    pub converged: bool,
    pub feasible: bool,
    pub max_violation: f64,
    pub bound_violation: f64,
    pub iterations: usize,
    pub objective: f64,
    pub kkt: f64,
    /// Equality multipliers (unscaled, sign convention `grad f + J^T lambda = 0`).
    pub multipliers: Vec<f64>,
    pub wall_time: f64,
    pub status: SqpStatus,
    pub restorations: usize,
    pub history: Vec<IterationLog>,
}

/// Solution of one QP subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub step: DVector<f64>,
    /// Equality multipliers, `H d + g + A^T lambda - nu = 0`.
    pub multipliers: DVector<f64>,
    /// Bound multipliers: positive at an active lower bound, negative at an upper one.
    pub bound_multipliers: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Active {
    Free,
    Lower,
    Upper,
}

/// Pivots below this (on the unit-diagonal row system) mark dependent rows.
const DEPENDENT_PIVOT: f64 = 1e-9;

/// Rows selected by diagonally pivoted Cholesky before a pivot drops below `tol`.
fn independent_rows(s: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let m = s.nrows();
    let mut work = s.clone();
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut chosen = Vec::with_capacity(m);
    while !remaining.is_empty() {
        let (pos, &piv) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| work[(*a.1, *a.1)].total_cmp(&work[(*b.1, *b.1)]))
            .expect("non-empty");
        let d = work[(piv, piv)];
        if !(d > tol) {
            break;
        }
        remaining.swap_remove(pos);
        chosen.push(piv);
        let root = d.sqrt();
        let col: Vec<f64> = remaining.iter().map(|&i| work[(i, piv)] / root).collect();
        for (a, &i) in remaining.iter().enumerate() {
            for (b, &j) in remaining.iter().enumerate() {
                work[(i, j)] -= col[a] * col[b];
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Equality-constrained QP over the free variables, variables in the working
/// set fixed at their bounds.
fn solve_eqp(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    g: &DVector<f64>,
    b: &DVector<f64>,
    fixed: &[(usize, f64)],
    free: &[usize],
    tikhonov: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = g.len();
    let m = a.nrows();
    let mut d = DVector::zeros(n);
    for &(j, v) in fixed {
        d[j] = v;
    }
    let nf = free.len();
    let mut b_tilde = b.clone();
    for &(j, v) in fixed {
        if v != 0.0 {
            for i in 0..m {
                b_tilde[i] -= a[(i, j)] * v;
            }
        }
    }
    if nf == 0 {
        return Ok((d, DVector::zeros(m)));
    }
    let hff = DMatrix::from_fn(nf, nf, |r, c| h[(free[r], free[c])]);
    let mut g_tilde = DVector::from_fn(nf, |r, _| g[free[r]]);
    for &(j, v) in fixed {
        if v != 0.0 {
            for r in 0..nf {
                g_tilde[r] += h[(free[r], j)] * v;
            }
        }
    }
    let chol = Cholesky::new(hff)
        .ok_or_else(|| Error::Qp("reduced Hessian is not positive definite".into()))?;
    let l = chol.l();
    let g_hat = l
        .solve_lower_triangular(&g_tilde)
        .ok_or_else(|| Error::Qp("triangular solve failed".into()))?;
    let mut y = -&g_hat;
    let mut mu = DVector::zeros(m);
    if m > 0 {
        let af = DMatrix::from_fn(m, nf, |r, c| a[(r, free[c])]);
        // A_F L^-T = (L^-1 A_F^T)^T
        let at = l
            .solve_lower_triangular(&af.transpose())
            .ok_or_else(|| Error::Qp("triangular solve failed".into()))?;
        let a_tilde = at.transpose();
        let mut s = &a_tilde * &at;
        // Jacobi equilibration, then Tikhonov relative to the unit diagonal.
        let diag_max = (0..m).map(|i| s[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let dscale: Vec<f64> = (0..m).map(|i| 1.0 / s[(i, i)].max(1e-300 * diag_max).sqrt()).collect();
        for i in 0..m {
            for j in 0..m {
                s[(i, j)] *= dscale[i] * dscale[j];
            }
        }
        let keep = independent_rows(&s, DEPENDENT_PIVOT);
        for i in 0..m {
            s[(i, i)] += tikhonov;
        }
        let rhs = &b_tilde + &a_tilde * &g_hat;
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |r, c| s[(keep[r], keep[c])]);
        let sub_rhs = DVector::from_fn(keep.len(), |r, _| rhs[keep[r]] * dscale[keep[r]]);
        let sol = Cholesky::new(sub)
            .ok_or_else(|| Error::Qp("row system is not positive definite".into()))?
            .solve(&sub_rhs);
        for (r, &i) in keep.iter().enumerate() {
            mu[i] = sol[r] * dscale[i];
        }
        y += &at * &mu;
    }
    let df = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Qp("triangular solve failed".into()))?;
    for (r, &j) in free.iter().enumerate() {
        d[j] = df[r];
    }
    Ok((d, -mu))
}

/// Walks from the zero step toward the min-norm solution of `A d = b`,
/// fixing each blocking variable at its bound and re-solving.
fn bounded_min_norm(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    max_iterations: usize,
    tikhonov: f64,
) -> Result<(DVector<f64>, Vec<Active>, usize)> {
    let n = a.ncols();
    let identity = DMatrix::identity(n, n);
    let zero = DVector::zeros(n);
    let mut state = vec![Active::Free; n];
    let mut d = DVector::zeros(n);
    for it in 1..=max_iterations {
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == Active::Free).collect();
        let fixed: Vec<(usize, f64)> = (0..n)
            .filter_map(|j| match state[j] {
                Active::Lower => Some((j, lo[j])),
                Active::Upper => Some((j, hi[j])),
                Active::Free => None,
            })
            .collect();
        let (target, _) = solve_eqp(&identity, a, &zero, b, &fixed, &free, tikhonov)?;
        let mut alpha = 1.0;
        let mut blocking = None;
        for &j in &free {
            let p: f64 = target[j] - d[j];
            let room: f64 = if p < 0.0 { lo[j] - d[j] } else { hi[j] - d[j] };
            if p != 0.0 && room.is_finite() {
                let t = (room / p).max(0.0);
                if t < alpha {
                    alpha = t;
                    blocking = Some((j, if p < 0.0 { Active::Lower } else { Active::Upper }));
                }
            }
        }
        match blocking {
            None => return Ok((target, state, it)),
            Some((j, side)) => {
                for &k in &free {
                    d[k] += alpha * (target[k] - d[k]);
                }
                state[j] = side;
                d[j] = if side == Active::Lower { lo[j] } else { hi[j] };
            }
        }
    }
    Err(Error::Qp("bounded least-squares start did not terminate".into()))
}

/// Primal active-set iterations from a bound-feasible `d`, keeping `A d`
/// fixed while minimizing `1/2 d'Hd + g'd`.
#[allow(clippy::too_many_arguments)]
fn primal_active_set(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    mut d: DVector<f64>,
    mut state: Vec<Active>,
    max_iterations: usize,
    tikhonov: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, usize)> {
    let n = g.len();
    let zero_rhs = DVector::zeros(a.nrows());
    for it in 1..=max_iterations {
        let fixed: Vec<(usize, f64)> =
            (0..n).filter(|&j| state[j] != Active::Free).map(|j| (j, 0.0)).collect();
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == Active::Free).collect();
        let gd = h * &d + g;
        let (p, lambda) = solve_eqp(h, a, &gd, &zero_rhs, &fixed, &free, tikhonov)?;
        let mut alpha = 1.0;
        let mut blocking = None;
        for &j in &free {
            if p[j] < 0.0 && lo[j].is_finite() {
                let t = (lo[j] - d[j]) / p[j];
                if t < alpha {
                    alpha = t.max(0.0);
                    blocking = Some((j, Active::Lower));
                }
            } else if p[j] > 0.0 && hi[j].is_finite() {
                let t = (hi[j] - d[j]) / p[j];
                if t < alpha {
                    alpha = t.max(0.0);
                    blocking = Some((j, Active::Upper));
                }
            }
        }
        if let Some((j, side)) = blocking {
            d += alpha * &p;
            state[j] = side;
            d[j] = if side == Active::Lower { lo[j] } else { hi[j] };
            continue;
        }
        d += &p;
        let grad_l = h * &d + g + a.transpose() * &lambda;
        let mut nu = DVector::zeros(n);
        let mut worst: Option<(usize, f64)> = None;
        let tol = 1e-12 * (1.0 + g.amax() + grad_l.amax());
        for j in 0..n {
            let wrong = match state[j] {
                Active::Free => continue,
                Active::Lower => -grad_l[j],
                Active::Upper => grad_l[j],
            };
            nu[j] = grad_l[j];
            if wrong > tol && worst.is_none_or(|(_, w)| wrong > w) {
                worst = Some((j, wrong));
            }
        }
        match worst {
            Some((j, _)) => state[j] = Active::Free,
            None => return Ok((d, lambda, nu, it)),
        }
    }
    Err(Error::Qp(format!("active set not settled after {max_iterations} iterations")))
}

/// Primal active-set solution of
/// `min 1/2 d'Hd + g'd  s.t.  A d = b,  lo <= d <= hi`.
///
/// A bound-feasible start closest to `A d = b` is found first (the
/// regularized minimum-norm solution when that respects the bounds, else a
/// bound-constrained least-squares phase), so rows that are dependent or
/// inconsistent with the box are satisfied in the least-squares sense.
/// `lo <= 0 <= hi` is required.
#[allow(clippy::too_many_arguments)]
pub fn qp_step(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    g: &DVector<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    max_iterations: usize,
    tikhonov: f64,
) -> Result<QpSolution> {
    let n = g.len();
    let m = a.nrows();
    if h.nrows() != n || h.ncols() != n || a.ncols() != n || m != b.len() || lo.len() != n || hi.len() != n {
        return Err(Error::Qp("inconsistent QP dimensions".into()));
    }
    if (0..n).any(|j| lo[j] > 0.0 || hi[j] < 0.0) {
        return Err(Error::Qp("the zero step must satisfy the bounds".into()));
    }
    let (start, state, phase1_iterations) = if m == 0 {
        (DVector::zeros(n), vec![Active::Free; n], 0)
    } else {
        bounded_min_norm(a, b, lo, hi, max_iterations.max(n), tikhonov)?
    };
    let (step, multipliers, bound_multipliers, it) =
        primal_active_set(h, a, g, lo, hi, start, state, max_iterations, tikhonov)?;
    Ok(QpSolution { step, multipliers, bound_multipliers, iterations: it + phase1_iterations })
}

/// Damped (Powell) BFGS update that keeps `h` positive definite.
pub fn damped_bfgs_update(h: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> bool {
    let hs = &*h * s;
    let shs = s.dot(&hs);
    if !(shs > 1e-300) || !shs.is_finite() {
        return false;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * shs { 1.0 } else { 0.8 * shs / (shs - sy) };
    let r = theta * y + (1.0 - theta) * &hs;
    let sr = s.dot(&r);
    if !(sr > 0.0) || !sr.is_finite() {
        return false;
    }
    let mut updated = &*h + &r * r.transpose() / sr - &hs * hs.transpose() / shs;
    let sym = (&updated + updated.transpose()) * 0.5;
    updated = sym;
    // Reject updates that leave the factorization numerically singular.
    let Some(chol) = Cholesky::new(updated.clone()) else { return false };
    let diag = chol.l_dirty().diagonal();
    let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(dmin * dmin > 1e-12 * dmax * dmax) {
        return false;
    }
    *h = updated;
    true
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Scaled<'a, N: Nlp + ?Sized> {
    nlp: &'a N,
    scale: Vec<f64>,
}

impl<N: Nlp + ?Sized> Scaled<'_, N> {
    fn unscale(&self, z: &DVector<f64>) -> Vec<f64> {
        z.iter().zip(&self.scale).map(|(v, s)| v * s).collect()
    }

    fn eval(&self, z: &DVector<f64>) -> Result<(f64, Vec<f64>)> {
        let x = self.unscale(z);
        let f = self.nlp.objective(&x)?;
        let c = self.nlp.equalities(&x)?;
        if !f.is_finite() || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective or equality residual".into()));
        }
        Ok((f, c))
    }

    fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.nlp.objective_gradient(&self.unscale(z))?;
        check_finite(&g, "objective gradient")?;
        Ok(DVector::from_iterator(g.len(), g.iter().zip(&self.scale).map(|(g, s)| g * s)))
    }

    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = self.nlp.equality_jacobian(&self.unscale(z))?;
        check_finite(j.as_slice(), "equality Jacobian")?;
        for (c, s) in self.scale.iter().enumerate() {
            j.column_mut(c).scale_mut(*s);
        }
        Ok(j)
    }
}

fn clip(z: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for j in 0..z.len() {
        z[j] = z[j].clamp(lo[j], hi[j]);
    }
}

/// Projected Lagrangian stationarity in scaled variables.
fn kkt_measure(
    g: &DVector<f64>,
    jac: &DMatrix<f64>,
    lambda: &DVector<f64>,
    z: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> f64 {
    let r = g + jac.transpose() * lambda;
    (0..z.len())
        .map(|j| {
            let at_lo = z[j] <= lo[j];
            let at_hi = z[j] >= hi[j];
            if at_lo && at_hi {
                0.0
            } else if at_lo {
                (-r[j]).max(0.0)
            } else if at_hi {
                r[j].max(0.0)
            } else {
                r[j].abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Gauss-Newton on the restoration residuals with a proximal term.
fn restore<N: Nlp + ?Sized>(sc: &Scaled<'_, N>, z: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<bool> {
    let residual = |z: &DVector<f64>| -> Result<Option<DVector<f64>>> {
        match sc.nlp.restoration_residuals(&sc.unscale(z)) {
            None => Ok(None),
            Some(r) => {
                let r = r?;
                Ok(Some(DVector::from_vec(r)))
            }
        }
    };
    for _ in 0..30 {
        let Some(r) = residual(z)? else { return Ok(false) };
        if r.amax() == 0.0 {
            return Ok(true);
        }
        let rows: Vec<usize> = (0..r.len()).filter(|&i| r[i] != 0.0).collect();
        let n = z.len();
        let mut jac = DMatrix::zeros(rows.len(), n);
        let mut zp = z.clone();
        for j in 0..n {
            let h = probe_step(z[j], 1e-7);
            zp[j] = z[j] + h;
            let rp = residual(&zp)?.expect("restoration residuals stay available");
            for (ri, &i) in rows.iter().enumerate() {
                jac[(ri, j)] = (rp[i] - r[i]) / h;
            }
            zp[j] = z[j];
        }
        let rr = DVector::from_iterator(rows.len(), rows.iter().map(|&i| r[i]));
        let mut s = &jac * jac.transpose();
        let diag_max = (0..rows.len()).map(|i| s[(i, i)]).fold(0.0, f64::max);
        if diag_max == 0.0 {
            return Ok(false);
        }
        for i in 0..rows.len() {
            s[(i, i)] += 1e-8 * diag_max;
        }
        let Some(chol) = Cholesky::new(s) else { return Ok(false) };
        let step = -(jac.transpose() * chol.solve(&rr));
        let before = r.norm_squared();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let mut trial = &*z + alpha * &step;
            clip(&mut trial, lo, hi);
            if let Ok(Some(rt)) = residual(&trial) {
                if rt.norm_squared() < before {
                    *z = trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Ok(false);
        }
    }
    Ok(residual(z)?.is_some_and(|r| r.amax() == 0.0))
}

/// Solve `nlp` from `guess`.
pub fn solve<N: Nlp + ?Sized>(nlp: &N, guess: &[f64], settings: &SqpSettings) -> Result<SqpResult> {
    settings.validate()?;
    let start = Instant::now();
    let n = nlp.num_variables();
    if guess.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: guess.len() });
    }
    let scale = nlp.variable_scale();
    if scale.len() != n || scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Config("variable scale must be positive and finite".into()));
    }
    let lo = DVector::from_iterator(n, nlp.lower_bounds().iter().zip(&scale).map(|(v, s)| v / s));
    let hi = DVector::from_iterator(n, nlp.upper_bounds().iter().zip(&scale).map(|(v, s)| v / s));
    if (0..n).any(|j| lo[j] > hi[j]) {
        return Err(Error::InvalidLimits("lower bound above upper bound".into()));
    }
    let sc = Scaled { nlp, scale: scale.clone() };
    let mut z = DVector::from_iterator(n, guess.iter().zip(&scale).map(|(v, s)| v / s));
    clip(&mut z, &lo, &hi);

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut mu = settings.penalty_initial;
    let (mut f, mut c) = sc.eval(&z)?;
    let mut lambda = DVector::zeros(c.len());
    let mut history = Vec::new();
    let mut best = (amax(&c), z.clone());
    let mut stall = 0usize;
    let mut restorations = 0usize;
    let mut status = SqpStatus::MaxIterations;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    let mut failures = 0usize;

    for iter in 0..settings.max_iterations {
        iterations = iter;
        let g = sc.gradient(&z)?;
        let jac = sc.jacobian(&z)?;
        let row_norms: Vec<f64> = (0..jac.nrows()).map(|i| jac.row(i).amax()).collect();
        let kept: Vec<usize> = (0..jac.nrows()).filter(|&i| row_norms[i] > settings.flat_row_tolerance).collect();
        let flat_violated = (0..c.len())
            .any(|i| row_norms[i] <= settings.flat_row_tolerance && c[i].abs() > settings.constraint_tolerance);

        if flat_violated && restorations < settings.max_restorations {
            restorations += 1;
            if restore(&sc, &mut z, &lo, &hi)? {
                let (f2, c2) = sc.eval(&z)?;
                f = f2;
                c = c2;
                h = DMatrix::identity(n, n);
                continue;
            }
        }

        let a_k = DMatrix::from_fn(kept.len(), n, |r, col| jac[(kept[r], col)]);
        let b_k = DVector::from_iterator(kept.len(), kept.iter().map(|&i| -c[i]));
        let dlo = &lo - &z;
        let dhi = &hi - &z;
        let qp = qp_step(&h, &a_k, &g, &b_k, &dlo, &dhi, settings.max_qp_iterations, settings.tikhonov);

        let mut lam_full = DVector::zeros(c.len());
        let direction = match qp {
            Ok(sol) => {
                for (r, &i) in kept.iter().enumerate() {
                    lam_full[i] = sol.multipliers[r];
                }
                Some(sol.step)
            }
            Err(_) => None,
        };
        if direction.is_some() {
            lambda = lam_full.clone();
        }
        let viol = amax(&c);
        kkt = kkt_measure(&g, &jac, &lambda, &z, &lo, &hi);
        if viol < best.0 {
            best = (viol, z.clone());
        }
        if viol <= settings.constraint_tolerance && kkt <= settings.kkt_tolerance {
            status = SqpStatus::Converged;
            break;
        }

        let mut used_fallback = direction.is_none();
        let mut d = match direction {
            Some(d) => d,
            None => DVector::zeros(n),
        };
        if !used_fallback {
            let lam_max = lambda.amax();
            if mu < lam_max + settings.penalty_margin * 1e-3 {
                mu = (1.5 * lam_max).max(mu) + settings.penalty_margin;
            }
        }
        let mut phi0 = f + mu * l1(&c);
        let kept_c: Vec<f64> = kept.iter().map(|&i| c[i]).collect();

        let directional = |d: &DVector<f64>, mu: f64| {
            let lin = &a_k * d;
            let after: f64 = kept_c.iter().zip(lin.iter()).map(|(ci, li)| (ci + li).abs()).sum();
            g.dot(d) + mu * (after - l1(&kept_c))
        };
        let mut dd = directional(&d, mu);
        if !used_fallback && dd >= 0.0 && d.amax() > 0.0 {
            // Raise the penalty until the step is a descent direction for the merit.
            let quad = 0.5 * d.dot(&(&h * &d));
            let lin = &a_k * &d;
            let after: f64 = kept_c.iter().zip(lin.iter()).map(|(ci, li)| (ci + li).abs()).sum();
            let reduction = l1(&kept_c) - after;
            if reduction > 0.0 {
                mu = mu.max((g.dot(&d) + quad) / (0.5 * reduction)) + settings.penalty_margin;
                phi0 = f + mu * l1(&c);
                dd = directional(&d, mu);
            }
        }
        if used_fallback || !(dd < 0.0) {
            // Steepest descent on the merit, projected on the bounds.
            used_fallback = true;
            let mut grad_phi = g.clone();
            for &i in &kept {
                let s = if c[i] > 0.0 { 1.0 } else if c[i] < 0.0 { -1.0 } else { 0.0 };
                grad_phi += mu * s * jac.row(i).transpose();
            }
            d = -grad_phi;
            for j in 0..n {
                d[j] = d[j].clamp(dlo[j], dhi[j]);
            }
            dd = -d.norm_squared();
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..settings.max_line_search {
            let mut trial = &z + alpha * &d;
            clip(&mut trial, &lo, &hi);
            if let Ok((ft, ct)) = sc.eval(&trial) {
                if ft + mu * l1(&ct) <= phi0 + settings.armijo * alpha * dd {
                    accepted = Some((trial, ft, ct));
                    break;
                }
            }
            alpha *= settings.backtrack_factor;
        }

        let Some((z_new, f_new, c_new)) = accepted else {
            failures += 1;
            if failures >= 3 {
                status = SqpStatus::Aborted(format!(
                    "line search failed {failures} times in a row at iteration {iter} (max violation {viol:.3e})"
                ));
                break;
            }
            h = DMatrix::identity(n, n);
            continue;
        };
        failures = 0;
        let s = &z_new - &z;
        history.push(IterationLog {
            iteration: iter,
            objective: f,
            max_violation: viol,
            merit: phi0,
            kkt,
            step: s.amax(),
            alpha,
        });
        let g_new = sc.gradient(&z_new)?;
        let jac_new = sc.jacobian(&z_new)?;
        if !used_fallback {
            let y = (&g_new + jac_new.transpose() * &lambda) - (&g + jac.transpose() * &lambda);
            if y.amax() > 1e-12 * s.amax() {
                damped_bfgs_update(&mut h, &s, &y);
            }
        }
        let new_viol = amax(&c_new);
        if new_viol < 0.999 * best.0 || new_viol <= settings.constraint_tolerance {
            stall = 0;
        } else {
            stall += 1;
        }
        z = z_new;
        f = f_new;
        c = c_new;
        if stall >= settings.stall_iterations {
            status = SqpStatus::Stalled(format!("no feasibility progress for {stall} iterations"));
            break;
        }
    }
    if status == SqpStatus::MaxIterations {
        iterations = settings.max_iterations;
    }

    let converged = status == SqpStatus::Converged;
    let final_z = if converged || amax(&c) <= best.0 { z } else { best.1 };
    let x = sc.unscale(&final_z);
    let c_final = nlp.equalities(&x)?;
    let f_final = nlp.objective(&x)?;
    let max_violation = amax(&c_final);
    let lo_x = nlp.lower_bounds();
    let hi_x = nlp.upper_bounds();
    let bound_violation = x
        .iter()
        .zip(lo_x.iter().zip(&hi_x))
        .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
        .fold(0.0, f64::max);
    let multipliers = lambda.iter().copied().collect();
    Ok(SqpResult {
        x,
        converged,
        feasible: max_violation <= settings.constraint_tolerance && bound_violation == 0.0,
        max_violation,
        bound_violation,
        iterations,
        objective: f_final,
        kkt,
        multipliers,
        wall_time: start.elapsed().as_secs_f64(),
        status,
        restorations,
        history,
    })
}
