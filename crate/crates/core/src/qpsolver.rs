//! Dense convex quadratic programming by a primal-dual interior-point method.
//!
//! Problems have the form
//!
//! ```text
//!     minimize     1/2 x' Q x + c' x
//!     subject to   A x  = b        (duals y)
//!                  G x <= u        (duals z >= 0)
//! ```
//!
//! with the stationarity convention `Q x + c + A' y + G' z = 0`. Linear programs are the
//! special case `Q = 0`. The method is Mehrotra's predictor-corrector applied to the
//! reduced KKT system, which is factored densely; sizes here are a few dozen variables.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Consecutive non-improving iterations after which the iteration is declared divergent.
const DIVERGENCE_WINDOW: usize = 10;

/// Lower bound on the complementarity target, relative to the tolerance.
const MU_FLOOR: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("quadratic term is not symmetric positive semidefinite: {0}")]
    NotConvex(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub u: DVector<f64>,
    pub var_names: Vec<String>,
    pub eq_names: Vec<String>,
    pub ineq_names: Vec<String>,
}

impl QuadraticProgram {
    /// An unconstrained problem in `n` variables with zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            q: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            g: DMatrix::zeros(0, n),
            u: DVector::zeros(0),
            var_names: (0..n).map(|i| format!("x{i}")).collect(),
            eq_names: Vec::new(),
            ineq_names: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.u.len()
    }

    /// Appends the equality row `coeffs' x = rhs`.
    pub fn add_eq(&mut self, name: impl Into<String>, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.a.nrows();
        self.a = std::mem::replace(&mut self.a, DMatrix::zeros(0, 0)).insert_row(row, 0.0);
        for &(j, v) in coeffs {
            self.a[(row, j)] += v;
        }
        self.b = std::mem::replace(&mut self.b, DVector::zeros(0)).push(rhs);
        self.eq_names.push(name.into());
        row
    }

    /// Appends the inequality row `coeffs' x <= rhs`.
    pub fn add_ineq(&mut self, name: impl Into<String>, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.g.nrows();
        self.g = std::mem::replace(&mut self.g, DMatrix::zeros(0, 0)).insert_row(row, 0.0);
        for &(j, v) in coeffs {
            self.g[(row, j)] += v;
        }
        self.u = std::mem::replace(&mut self.u, DVector::zeros(0)).push(rhs);
        self.ineq_names.push(name.into());
        row
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    /// Structural and convexity checks.
    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n();
        let dims = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(SolverError::DimensionMismatch(format!("{what} is {got:?}, expected {want:?}")))
            } else {
                Ok(())
            }
        };
        dims("Q", self.q.shape(), (n, n))?;
        dims("A", self.a.shape(), (self.b.len(), n))?;
        dims("G", self.g.shape(), (self.u.len(), n))?;
        if self.var_names.len() != n || self.eq_names.len() != self.b.len() || self.ineq_names.len() != self.u.len() {
            return Err(SolverError::DimensionMismatch("name lists do not match row/column counts".into()));
        }
        let all_finite = self
            .q
            .iter()
            .chain(self.c.iter())
            .chain(self.a.iter())
            .chain(self.b.iter())
            .chain(self.g.iter())
            .chain(self.u.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(SolverError::NumericalFailure("non-finite problem data".into()));
        }
        let asym = (&self.q - self.q.transpose()).amax();
        if asym > 1e-12 {
            return Err(SolverError::NotConvex(format!("asymmetry {asym:e}")));
        }
        if n > 0 && self.q.amax() > 0.0 {
            let sym = (&self.q + self.q.transpose()) * 0.5;
            let min_eig = sym.symmetric_eigenvalues().min();
            if min_eig < -1e-9 {
                return Err(SolverError::NotConvex(format!("smallest eigenvalue {min_eig:e}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

/// Infinity-norm residuals of the KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KktResiduals {
    /// `|Q x + c + A' y + G' z|`
    pub stationarity: f64,
    /// `max(|A x - b|, max(G x - u, 0))`
    pub primal_feasibility: f64,
    /// `max_k |z_k (u_k - G_k x)|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal_feasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSolution {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

impl SolverSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Recomputes the KKT residuals from the problem data and a candidate point.
pub fn kkt_report(qp: &QuadraticProgram, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> KktResiduals {
    let stat = &qp.q * x + &qp.c + qp.a.tr_mul(y) + qp.g.tr_mul(z);
    let eq = &qp.a * x - &qp.b;
    let slack = &qp.u - &qp.g * x;
    let eq_viol = eq.amax();
    let ineq_viol = slack.iter().fold(0.0_f64, |m, &s| m.max(-s));
    let comp = z.iter().zip(slack.iter()).fold(0.0_f64, |m, (&zk, &sk)| m.max((zk * sk).abs()));
    KktResiduals {
        stationarity: if stat.is_empty() { 0.0 } else { stat.amax() },
        primal_feasibility: if eq.is_empty() { ineq_viol } else { eq_viol.max(ineq_viol) },
        complementarity: comp,
    }
}

pub fn solve_lp(
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    u: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolverSolution, SolverError> {
    let n = c.len();
    let mut qp = QuadraticProgram::new(n);
    qp.eq_names = (0..b.len()).map(|i| format!("eq{i}")).collect();
    qp.ineq_names = (0..u.len()).map(|i| format!("ineq{i}")).collect();
    qp.c = c;
    qp.a = a;
    qp.b = b;
    qp.g = g;
    qp.u = u;
    solve_qp(&qp, tol, max_iter)
}

/// Largest step in (0, 1] keeping `v + alpha dv` nonnegative.
fn step_to_boundary(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0_f64;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

struct KktSystem {
    n: usize,
    me: usize,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    exact: DMatrix<f64>,
}

impl KktSystem {
    fn new(qp: &QuadraticProgram, w: &DVector<f64>) -> Result<Self, SolverError> {
        let n = qp.n();
        let me = qp.n_eq();
        let mut h = qp.q.clone();
        // H = Q + G' W G
        let gw = DMatrix::from_fn(qp.g.nrows(), n, |i, j| qp.g[(i, j)] * w[i]);
        h += qp.g.tr_mul(&gw);
        let mut exact = DMatrix::zeros(n + me, n + me);
        exact.view_mut((0, 0), (n, n)).copy_from(&h);
        exact.view_mut((0, n), (n, me)).copy_from(&qp.a.transpose());
        exact.view_mut((n, 0), (me, n)).copy_from(&qp.a);
        // Regularization is sized by the problem data so refinement can remove it; it grows
        // with the barrier weights only when the factorization would otherwise be singular.
        let g2 = if qp.g.is_empty() { 0.0 } else { qp.g.amax().powi(2) };
        let base = qp.q.amax().max(qp.a.amax()).max(g2).max(1.0);
        let big = exact.amax().max(base);
        for delta in [1e-11 * base, 1e-11 * big, 1e-8 * big] {
            let mut reg = exact.clone();
            for i in 0..n {
                reg[(i, i)] += delta;
            }
            for i in n..n + me {
                reg[(i, i)] -= delta;
            }
            let lu = reg.lu();
            if lu.is_invertible() {
                return Ok(Self { n, me, lu, exact });
            }
        }
        Err(SolverError::NumericalFailure("singular KKT matrix".into()))
    }

    /// Solves the unregularized system with iterative refinement on the regularized factors.
    fn solve(&self, rhs: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), SolverError> {
        let mut sol = self.lu.solve(rhs).ok_or_else(|| SolverError::NumericalFailure("singular KKT matrix".into()))?;
        for _ in 0..5 {
            let r = rhs - &self.exact * &sol;
            if r.amax() <= 1e-14 * rhs.amax().max(1.0) {
                break;
            }
            if let Some(d) = self.lu.solve(&r) {
                sol += d;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NumericalFailure("non-finite Newton direction".into()));
        }
        Ok((sol.rows(0, self.n).into_owned(), sol.rows(self.n, self.me).into_owned()))
    }
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
}

/// Newton direction for the residuals `rd`, `rp`, `rg` and complementarity target `rc`.
#[allow(clippy::too_many_arguments)]
fn newton_direction(
    qp: &QuadraticProgram,
    kkt: &KktSystem,
    s: &DVector<f64>,
    z: &DVector<f64>,
    rd: &DVector<f64>,
    rp: &DVector<f64>,
    rg: &DVector<f64>,
    rc: &DVector<f64>,
) -> Result<Direction, SolverError> {
    // dz = W G dx + S^-1 (Z rg - rc), ds = -rg - G dx
    let t = DVector::from_fn(s.len(), |i, _| (z[i] * rg[i] - rc[i]) / s[i]);
    let top = -rd - qp.g.tr_mul(&t);
    let mut rhs = DVector::zeros(qp.n() + qp.n_eq());
    rhs.rows_mut(0, qp.n()).copy_from(&top);
    rhs.rows_mut(qp.n(), qp.n_eq()).copy_from(&(-rp));
    let (dx, dy) = kkt.solve(&rhs)?;
    let gdx = &qp.g * &dx;
    let dz = DVector::from_fn(s.len(), |i, _| z[i] / s[i] * gdx[i] + t[i]);
    let ds = -rg - gdx;
    Ok(Direction { dx, dy, dz, ds })
}

fn finish(
    qp: &QuadraticProgram,
    status: SolveStatus,
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    iterations: usize,
) -> SolverSolution {
    let kkt = kkt_report(qp, &x, &y, &z);
    SolverSolution { status, objective: qp.objective(&x), x, y, z, kkt, iterations }
}

/// Normalized Farkas test: `A' y + G' z ~ 0`, `z >= 0`, `b' y + u' z < 0`.
fn primal_infeasibility_certificate(qp: &QuadraticProgram, y: &DVector<f64>, z: &DVector<f64>) -> bool {
    let scale = y.amax().max(z.amax());
    if scale <= 0.0 {
        return false;
    }
    let yn = y / scale;
    let zn = z / scale;
    let gap = qp.b.dot(&yn) + qp.u.dot(&zn);
    let comb = qp.a.tr_mul(&yn) + qp.g.tr_mul(&zn);
    let comb_norm = if comb.is_empty() { 0.0 } else { comb.amax() };
    gap < -1e-6 && comb_norm <= 1e-5 * gap.abs() && zn.min() >= -1e-9
}

/// Normalized recession test: `Q d ~ 0`, `A d ~ 0`, `G d <= 0`, `c' d < 0`.
fn dual_infeasibility_certificate(qp: &QuadraticProgram, x: &DVector<f64>) -> bool {
    let scale = x.amax();
    if scale <= 1e6 {
        return false;
    }
    let d = x / scale;
    let cd = qp.c.dot(&d);
    let tiny = 1e-6;
    let qd = if d.is_empty() { 0.0 } else { (&qp.q * &d).amax() };
    let ad = if qp.n_eq() == 0 { 0.0 } else { (&qp.a * &d).amax() };
    let gd = if qp.n_ineq() == 0 { f64::NEG_INFINITY } else { (&qp.g * &d).max() };
    (cd < -tiny || qd > 0.0 && cd <= 0.0 && qd < tiny) && qd <= tiny && ad <= tiny && gd <= tiny
}

/// Solves `qp` to absolute KKT tolerance `tol`.
pub fn solve_qp(qp: &QuadraticProgram, tol: f64, max_iter: usize) -> Result<SolverSolution, SolverError> {
    qp.validate()?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(SolverError::NumericalFailure(format!("tolerance must be positive and finite, got {tol}")));
    }
    let n = qp.n();
    let me = qp.n_eq();
    let mi = qp.n_ineq();

    // Starting point: minimize 1/2 x'Qx + c'x + 1/2 |Gx - u|^2 subject to Ax = b, then
    // shift slacks and duals into the interior.
    let init = KktSystem::new(qp, &DVector::from_element(mi, 1.0))?;
    let mut rhs0 = DVector::zeros(n + me);
    rhs0.rows_mut(0, n).copy_from(&(-&qp.c + qp.g.tr_mul(&qp.u)));
    rhs0.rows_mut(n, me).copy_from(&qp.b);
    let (mut x, mut y) = init.solve(&rhs0)?;
    let r0 = &qp.u - &qp.g * &x;
    let scale = 1.0_f64.max(qp.c.amax().max(if mi > 0 { qp.u.amax() } else { 0.0 }).sqrt());
    let mut s = r0.map(|v| v.max(scale));
    let mut z = DVector::from_element(mi, scale);

    let mut best_merit = f64::INFINITY;
    let mut stalled = 0usize;

    for iter in 0..max_iter {
        let rd = &qp.q * &x + &qp.c + qp.a.tr_mul(&y) + qp.g.tr_mul(&z);
        let rp = &qp.a * &x - &qp.b;
        let rg = &qp.g * &x + &s - &qp.u;
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };

        let report = kkt_report(qp, &x, &y, &z);
        if report.max() <= tol && z.iter().all(|&v| v >= -1e-9) {
            return Ok(finish(qp, SolveStatus::Optimal, x, y, z, iter));
        }

        if primal_infeasibility_certificate(qp, &y, &z) && stalled >= DIVERGENCE_WINDOW / 2 {
            return Ok(finish(qp, SolveStatus::Infeasible, x, y, z, iter));
        }
        if dual_infeasibility_certificate(qp, &x) {
            return Ok(finish(qp, SolveStatus::Unbounded, x, y, z, iter));
        }

        let norm_or_zero = |v: &DVector<f64>| if v.is_empty() { 0.0 } else { v.amax() };
        let merit = norm_or_zero(&rd).max(norm_or_zero(&rp)).max(norm_or_zero(&rg)) + mu;
        if merit < 0.9 * best_merit {
            best_merit = merit;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= DIVERGENCE_WINDOW {
                if primal_infeasibility_certificate(qp, &y, &z) {
                    return Ok(finish(qp, SolveStatus::Infeasible, x, y, z, iter));
                }
                if dual_infeasibility_certificate(qp, &x) {
                    return Ok(finish(qp, SolveStatus::Unbounded, x, y, z, iter));
                }
            }
        }

        let w = DVector::from_fn(mi, |i, _| z[i] / s[i]);
        let kkt = KktSystem::new(qp, &w)?;

        // Predictor.
        let rc_aff = s.component_mul(&z);
        let aff = newton_direction(qp, &kkt, &s, &z, &rd, &rp, &rg, &rc_aff)?;
        let alpha_p = step_to_boundary(&s, &aff.ds);
        let alpha_d = step_to_boundary(&z, &aff.dz);
        let sigma = if mi > 0 {
            let mu_aff = (&s + &aff.ds * alpha_p).dot(&(&z + &aff.dz * alpha_d)) / mi as f64;
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector. The centering target is floored near the tolerance so that slacks and
        // duals do not collapse onto the boundary before the residuals are closed.
        let target = (sigma * mu).max(MU_FLOOR * tol);
        let rc = DVector::from_fn(mi, |i, _| s[i] * z[i] + aff.ds[i] * aff.dz[i] - target);
        let dir = newton_direction(qp, &kkt, &s, &z, &rd, &rp, &rg, &rc)?;
        let alpha_p = (0.99 * step_to_boundary(&s, &dir.ds)).min(1.0);
        let alpha_d = (0.99 * step_to_boundary(&z, &dir.dz)).min(1.0);
        // Equal primal and dual steps keep the stationarity residual decreasing for QPs.
        let alpha = if qp.q.amax() > 0.0 { alpha_p.min(alpha_d) } else { 1.0 };
        let (ap, ad) = if qp.q.amax() > 0.0 { (alpha, alpha) } else { (alpha_p, alpha_d) };

        x += &dir.dx * ap;
        s += &dir.ds * ap;
        y += &dir.dy * ad;
        z += &dir.dz * ad;

        if x.iter().chain(y.iter()).chain(z.iter()).chain(s.iter()).any(|v| !v.is_finite()) {
            return Err(SolverError::NumericalFailure(format!("non-finite iterate at iteration {iter}")));
        }
        // Keep strictly interior.
        for v in s.iter_mut().chain(z.iter_mut()) {
            if *v <= 1e-300 {
                *v = 1e-300;
            }
        }
    }

    let report = kkt_report(qp, &x, &y, &z);
    if report.max() <= tol && z.iter().all(|&v| v >= -1e-9) {
        return Ok(finish(qp, SolveStatus::Optimal, x, y, z, max_iter));
    }
    if primal_infeasibility_certificate(qp, &y, &z) {
        return Ok(finish(qp, SolveStatus::Infeasible, x, y, z, max_iter));
    }
    if dual_infeasibility_certificate(qp, &x) {
        return Ok(finish(qp, SolveStatus::Unbounded, x, y, z, max_iter));
    }
    Ok(finish(qp, SolveStatus::MaxIterations, x, y, z, max_iter))
}
