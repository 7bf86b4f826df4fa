//! Convex quadratic programs with box and linear equality constraints.
//!
//! ```text
//!     minimize    ½ zᵀQz + qᵀz
//!     subject to  A z = b,   lower ≤ z ≤ upper
//! ```
//!
//! Solved with a primal–dual interior-point method using Mehrotra's
//! predictor–corrector. Multipliers follow the stationarity convention
//!
//! ```text
//!     Qz + q + Aᵀμ − λ_lower + λ_upper = 0,   λ_lower, λ_upper ≥ 0
//! ```
//!
//! Bounds may be infinite, in which case the corresponding multiplier is
//! identically zero.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU, SVD};

use crate::error::{Error, Result};

/// Quadratic term of the objective.
#[derive(Debug, Clone)]
pub enum Hessian {
    Dense(DMatrix<f64>),
    /// `Q = [[K, −K], [−K, K]]` acting on `z = [a; b]`; the objective only
    /// sees `a − b`. This is the shape of every ε-insensitive dual.
    Paired(DMatrix<f64>),
}

impl Hessian {
    fn dim(&self) -> usize {
        match self {
            Hessian::Dense(q) => q.nrows(),
            Hessian::Paired(k) => 2 * k.nrows(),
        }
    }

    fn mul(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            Hessian::Dense(q) => q * z,
            Hessian::Paired(k) => {
                let h = k.nrows();
                let d = z.rows(0, h) - z.rows(h, h);
                let kd = k * d;
                let mut out = DVector::zeros(2 * h);
                out.rows_mut(0, h).copy_from(&kd);
                out.rows_mut(h, h).copy_from(&(-kd));
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Dense(q) => q.clone(),
            Hessian::Paired(k) => {
                let h = k.nrows();
                let mut q = DMatrix::zeros(2 * h, 2 * h);
                q.view_mut((0, 0), (h, h)).copy_from(k);
                q.view_mut((h, h), (h, h)).copy_from(k);
                q.view_mut((0, h), (h, h)).copy_from(&(-k));
                q.view_mut((h, 0), (h, h)).copy_from(&(-k));
                q
            }
        }
    }

    fn trace(&self) -> f64 {
        match self {
            Hessian::Dense(q) => q.trace(),
            Hessian::Paired(k) => 2.0 * k.trace(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: Hessian,
    pub q: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QpProblem {
    /// Box-constrained problem without equality constraints.
    pub fn boxed(hessian: Hessian, q: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        let n = q.len();
        QpProblem {
            hessian,
            q,
            lower,
            upper,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn with_equality(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&self.hessian.mul(z)) + self.q.dot(z)
    }

    fn validate(&self) -> Result<()> {
        let n = self.q.len();
        for (what, len) in [
            ("hessian", self.hessian.dim()),
            ("lower", self.lower.len()),
            ("upper", self.upper.len()),
            ("a_eq columns", self.a_eq.ncols()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch { context: what, expected: n, got: len });
            }
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::DimensionMismatch {
                context: "b_eq",
                expected: self.a_eq.nrows(),
                got: self.b_eq.len(),
            });
        }
        if let Some(i) = (0..n).find(|&i| !(self.lower[i] <= self.upper[i])) {
            return Err(Error::invalid(
                "lower",
                format!("bound {i} has lower {} > upper {}", self.lower[i], self.upper[i]),
            ));
        }
        if self.q.iter().chain(self.b_eq.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("q", "problem data must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub lower_multipliers: DVector<f64>,
    pub upper_multipliers: DVector<f64>,
    pub objective: f64,
    /// Largest of the scaled stationarity, primal feasibility and
    /// complementarity residuals.
    pub kkt_residual: f64,
    /// Primal objective minus the Lagrangian dual bound.
    pub gap: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { tol: 1e-8, max_iter: 100 }
    }
}

/// Cholesky that also rejects numerically singular pivots.
fn robust_cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    let maxdiag = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let ok = (0..n).all(|i| {
        let p = l[(i, i)] * l[(i, i)];
        p.is_finite() && p > 1e-14 * maxdiag.max(f64::MIN_POSITIVE)
    });
    ok.then_some(chol)
}

enum HessSolver {
    Dense(Cholesky<f64, Dyn>),
    Paired {
        chol: Cholesky<f64, Dyn>,
        k: DMatrix<f64>,
        da: DVector<f64>,
        db: DVector<f64>,
        einv: DVector<f64>,
    },
}

impl HessSolver {
    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            HessSolver::Dense(c) => c.solve(v),
            HessSolver::Paired { chol, k, da, db, einv } => {
                let h = k.nrows();
                let va = v.rows(0, h);
                let vb = v.rows(h, h);
                let rhs = DVector::from_fn(h, |i, _| einv[i] * (va[i] / da[i] - vb[i] / db[i]));
                let dd = chol.solve(&rhs);
                let kd = k * &dd;
                let mut out = DVector::zeros(2 * h);
                for i in 0..h {
                    out[i] = (va[i] - kd[i]) / da[i];
                    out[h + i] = (vb[i] + kd[i]) / db[i];
                }
                out
            }
        }
    }
}

/// Factorization of the reduced Newton system
/// `[[Q + D, Aᵀ], [A, 0]] [dz; dy] = [r1; r2]`.
enum Newton {
    Schur {
        hess: HessSolver,
        hinv_at: DMatrix<f64>,
        schur: SchurSolve,
    },
    Augmented(LU<f64, Dyn, Dyn>, usize),
}

enum SchurSolve {
    None,
    Chol(Cholesky<f64, Dyn>),
    Pinv(DMatrix<f64>),
}

impl Newton {
    fn build(p: &QpProblem, diag: &DVector<f64>) -> Option<Newton> {
        let n = p.dim();
        let m = p.a_eq.nrows();
        let jitter = 1e-10 * (p.hessian.trace().abs() / n.max(1) as f64).max(1e-300);
        let hess = Self::hess_solver(p, diag, 0.0).or_else(|| Self::hess_solver(p, diag, jitter));
        match hess {
            Some(hess) => {
                if m == 0 {
                    return Some(Newton::Schur { hess, hinv_at: DMatrix::zeros(n, 0), schur: SchurSolve::None });
                }
                let at = p.a_eq.transpose();
                let mut hinv_at = DMatrix::zeros(n, m);
                for j in 0..m {
                    hinv_at.set_column(j, &hess.solve(&at.column(j).into_owned()));
                }
                let s = &p.a_eq * &hinv_at;
                let s = (&s + s.transpose()) * 0.5;
                let schur = match robust_cholesky(s.clone()) {
                    Some(c) => SchurSolve::Chol(c),
                    None => {
                        let svd = SVD::new(s, true, true);
                        let smax = svd.singular_values.max();
                        SchurSolve::Pinv(svd.pseudo_inverse(1e-13 * smax.max(f64::MIN_POSITIVE)).ok()?)
                    }
                };
                Some(Newton::Schur { hess, hinv_at, schur })
            }
            None => {
                let mut kkt = DMatrix::zeros(n + m, n + m);
                let mut q = p.hessian.to_dense();
                for i in 0..n {
                    q[(i, i)] += diag[i];
                }
                kkt.view_mut((0, 0), (n, n)).copy_from(&q);
                kkt.view_mut((n, 0), (m, n)).copy_from(&p.a_eq);
                kkt.view_mut((0, n), (n, m)).copy_from(&p.a_eq.transpose());
                let lu = LU::new(kkt);
                lu.is_invertible().then_some(Newton::Augmented(lu, n))
            }
        }
    }

    fn hess_solver(p: &QpProblem, diag: &DVector<f64>, jitter: f64) -> Option<HessSolver> {
        match &p.hessian {
            Hessian::Paired(k) => {
                let h = k.nrows();
                let da = DVector::from_fn(h, |i, _| diag[i] + jitter);
                let db = DVector::from_fn(h, |i, _| diag[h + i] + jitter);
                if da.iter().chain(db.iter()).all(|v| *v > 0.0) {
                    let einv = DVector::from_fn(h, |i, _| 1.0 / (1.0 / da[i] + 1.0 / db[i]));
                    let mut s = k.clone();
                    for i in 0..h {
                        s[(i, i)] += einv[i];
                    }
                    let chol = robust_cholesky(s)?;
                    return Some(HessSolver::Paired { chol, k: k.clone(), da, db, einv });
                }
                let mut q = p.hessian.to_dense();
                for i in 0..2 * h {
                    q[(i, i)] += diag[i] + jitter;
                }
                robust_cholesky(q).map(HessSolver::Dense)
            }
            Hessian::Dense(q) => {
                let mut q = q.clone();
                for i in 0..q.nrows() {
                    q[(i, i)] += diag[i] + jitter;
                }
                robust_cholesky(q).map(HessSolver::Dense)
            }
        }
    }

    fn solve(&self, p: &QpProblem, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match self {
            Newton::Schur { hess, hinv_at, schur } => {
                let hr1 = hess.solve(r1);
                let dy = match schur {
                    SchurSolve::None => DVector::zeros(0),
                    SchurSolve::Chol(c) => c.solve(&(&p.a_eq * &hr1 - r2)),
                    SchurSolve::Pinv(pi) => pi * (&p.a_eq * &hr1 - r2),
                };
                let dz = if dy.is_empty() { hr1 } else { hr1 - hinv_at * &dy };
                (dz, dy)
            }
            Newton::Augmented(lu, n) => {
                let m = r2.len();
                let mut rhs = DVector::zeros(n + m);
                rhs.rows_mut(0, *n).copy_from(r1);
                rhs.rows_mut(*n, m).copy_from(r2);
                let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n + m));
                (sol.rows(0, *n).into_owned(), sol.rows(*n, m).into_owned())
            }
        }
    }
}

struct Bounds {
    has_lo: Vec<bool>,
    has_up: Vec<bool>,
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>, mask: &[bool]) -> f64 {
    let mut a = f64::INFINITY;
    for i in 0..v.len() {
        if mask[i] && dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

struct Iterate {
    z: DVector<f64>,
    y: DVector<f64>,
    zl: DVector<f64>,
    zu: DVector<f64>,
}

struct Residuals {
    rd: DVector<f64>,
    rp: DVector<f64>,
    sl: DVector<f64>,
    su: DVector<f64>,
    mu: f64,
    kkt: f64,
    gap: f64,
    objective: f64,
}

fn residuals(p: &QpProblem, b: &Bounds, it: &Iterate, ncomp: usize) -> Residuals {
    let n = p.dim();
    let qz = p.hessian.mul(&it.z);
    let rd = &qz + &p.q + p.a_eq.transpose() * &it.y - &it.zl + &it.zu;
    let rp = &p.a_eq * &it.z - &p.b_eq;
    let sl = DVector::from_fn(n, |i, _| if b.has_lo[i] { it.z[i] - p.lower[i] } else { 0.0 });
    let su = DVector::from_fn(n, |i, _| if b.has_up[i] { p.upper[i] - it.z[i] } else { 0.0 });
    let comp: f64 = sl.dot(&it.zl) + su.dot(&it.zu);
    let mu = if ncomp > 0 { comp / ncomp as f64 } else { 0.0 };
    let objective = 0.5 * it.z.dot(&qz) + p.q.dot(&it.z);
    let mut dual = -0.5 * it.z.dot(&qz) - p.b_eq.dot(&it.y);
    for i in 0..n {
        if b.has_lo[i] {
            dual += it.zl[i] * p.lower[i];
        }
        if b.has_up[i] {
            dual -= it.zu[i] * p.upper[i];
        }
    }
    let gap = objective - dual;
    let dscale = 1.0 + inf_norm(&p.q).max(inf_norm(&qz));
    let pscale = 1.0 + inf_norm(&p.b_eq);
    let oscale = 1.0 + objective.abs();
    let kkt = (inf_norm(&rd) / dscale)
        .max(inf_norm(&rp) / pscale)
        .max(comp / oscale);
    Residuals { rd, rp, sl, su, mu, kkt, gap, objective }
}

fn initial_point(p: &QpProblem, b: &Bounds) -> Iterate {
    let n = p.dim();
    let z = DVector::from_fn(n, |i, _| match (b.has_lo[i], b.has_up[i]) {
        (true, true) => 0.5 * (p.lower[i] + p.upper[i]),
        (true, false) => p.lower[i] + 1.0,
        (false, true) => p.upper[i] - 1.0,
        (false, false) => 0.0,
    });
    let scale = 1.0 + inf_norm(&p.q).max(1.0).min(1e3);
    let zl = DVector::from_fn(n, |i, _| if b.has_lo[i] { scale } else { 0.0 });
    let zu = DVector::from_fn(n, |i, _| if b.has_up[i] { scale } else { 0.0 });
    Iterate { z, y: DVector::zeros(p.a_eq.nrows()), zl, zu }
}

/// Solves the problem to a scaled KKT tolerance of `opts.tol`.
///
/// Returns an error only for malformed problems; convergence failures are
/// reported through [`QpSolution::status`].
pub fn solve_qp(p: &QpProblem, opts: QpOptions) -> Result<QpSolution> {
    p.validate()?;
    let n = p.dim();
    let bounds = Bounds {
        has_lo: p.lower.iter().map(|v| v.is_finite()).collect(),
        has_up: p.upper.iter().map(|v| v.is_finite()).collect(),
    };
    // Variables with lower == upper are fixed; they are kept in the system
    // with a tiny interior so the barrier stays well-defined.
    let fixed: Vec<usize> = (0..n)
        .filter(|&i| bounds.has_lo[i] && bounds.has_up[i] && p.lower[i] == p.upper[i])
        .collect();
    if !fixed.is_empty() {
        return solve_with_fixed(p, opts, &fixed);
    }
    let ncomp = bounds.has_lo.iter().filter(|b| **b).count() + bounds.has_up.iter().filter(|b| **b).count();
    let mut it = initial_point(p, &bounds);
    let mut res = residuals(p, &bounds, &it, ncomp);
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut factor_failed = false;
    for iter in 0..opts.max_iter {
        if res.kkt <= opts.tol {
            status = QpStatus::Optimal;
            break;
        }
        iterations = iter + 1;
        let diag = DVector::from_fn(n, |i, _| {
            let mut d = 0.0;
            if bounds.has_lo[i] {
                d += it.zl[i] / res.sl[i];
            }
            if bounds.has_up[i] {
                d += it.zu[i] / res.su[i];
            }
            d
        });
        let Some(newton) = Newton::build(p, &diag) else {
            factor_failed = true;
            break;
        };
        let step = |rl: &DVector<f64>, ru: &DVector<f64>| {
            let mut r1 = -&res.rd;
            for i in 0..n {
                if bounds.has_lo[i] {
                    r1[i] -= rl[i] / res.sl[i];
                }
                if bounds.has_up[i] {
                    r1[i] += ru[i] / res.su[i];
                }
            }
            let r2 = -&res.rp;
            let (dz, dy) = newton.solve(p, &r1, &r2);
            let dzl = DVector::from_fn(n, |i, _| {
                if bounds.has_lo[i] {
                    (-rl[i] - it.zl[i] * dz[i]) / res.sl[i]
                } else {
                    0.0
                }
            });
            let dzu = DVector::from_fn(n, |i, _| {
                if bounds.has_up[i] {
                    (-ru[i] + it.zu[i] * dz[i]) / res.su[i]
                } else {
                    0.0
                }
            });
            (dz, dy, dzl, dzu)
        };
        let step_len = |dz: &DVector<f64>, dzl: &DVector<f64>, dzu: &DVector<f64>| {
            let neg_dz = -dz;
            max_step(&res.sl, dz, &bounds.has_lo)
                .min(max_step(&res.su, &neg_dz, &bounds.has_up))
                .min(max_step(&it.zl, dzl, &bounds.has_lo))
                .min(max_step(&it.zu, dzu, &bounds.has_up))
        };

        // Predictor.
        let rl0 = res.sl.component_mul(&it.zl);
        let ru0 = res.su.component_mul(&it.zu);
        let (dz_a, _, dzl_a, dzu_a) = step(&rl0, &ru0);
        let alpha_aff = step_len(&dz_a, &dzl_a, &dzu_a).min(1.0);
        let mut sigma = 0.0;
        if ncomp > 0 {
            let mut comp_aff = 0.0;
            for i in 0..n {
                if bounds.has_lo[i] {
                    comp_aff += (res.sl[i] + alpha_aff * dz_a[i]) * (it.zl[i] + alpha_aff * dzl_a[i]);
                }
                if bounds.has_up[i] {
                    comp_aff += (res.su[i] - alpha_aff * dz_a[i]) * (it.zu[i] + alpha_aff * dzu_a[i]);
                }
            }
            let mu_aff = comp_aff / ncomp as f64;
            sigma = (mu_aff / res.mu).powi(3).clamp(0.0, 1.0);
        }

        // Corrector.
        let target = sigma * res.mu;
        let rl = DVector::from_fn(n, |i, _| {
            if bounds.has_lo[i] {
                rl0[i] + dz_a[i] * dzl_a[i] - target
            } else {
                0.0
            }
        });
        let ru = DVector::from_fn(n, |i, _| {
            if bounds.has_up[i] {
                ru0[i] - dz_a[i] * dzu_a[i] - target
            } else {
                0.0
            }
        });
        let (dz, dy, dzl, dzu) = step(&rl, &ru);
        let amax = step_len(&dz, &dzl, &dzu);
        let alpha = if amax.is_finite() { (0.995 * amax).min(1.0) } else { 1.0 };
        if !(alpha > 0.0) || dz.iter().any(|v| !v.is_finite()) {
            factor_failed = true;
            break;
        }
        it.z += alpha * dz;
        it.y += alpha * dy;
        it.zl += alpha * dzl;
        it.zu += alpha * dzu;
        res = residuals(p, &bounds, &it, ncomp);
    }
    if status != QpStatus::Optimal && res.kkt <= opts.tol {
        status = QpStatus::Optimal;
    }
    if factor_failed && status != QpStatus::Optimal && p.a_eq.nrows() == 0 {
        return Ok(projected_gradient(p, &bounds, it.z, opts, iterations));
    }
    if status != QpStatus::Optimal && p.a_eq.nrows() > 0 && equality_infeasible(p, opts) {
        status = QpStatus::Infeasible;
    }
    Ok(QpSolution {
        z: it.z,
        eq_multipliers: it.y,
        lower_multipliers: it.zl,
        upper_multipliers: it.zu,
        objective: res.objective,
        kkt_residual: res.kkt,
        gap: res.gap,
        iterations,
        status,
    })
}

/// Phase-1 check: minimizes `½‖Az − b‖²` over the box and reports whether the
/// residual stays bounded away from zero.
fn equality_infeasible(p: &QpProblem, opts: QpOptions) -> bool {
    let ata = p.a_eq.transpose() * &p.a_eq;
    let phase1 = QpProblem::boxed(
        Hessian::Dense(ata),
        -(p.a_eq.transpose() * &p.b_eq),
        p.lower.clone(),
        p.upper.clone(),
    );
    match solve_qp(&phase1, opts) {
        Ok(sol) => {
            let r = &p.a_eq * &sol.z - &p.b_eq;
            inf_norm(&r) > opts.tol.sqrt() * (1.0 + inf_norm(&p.b_eq))
        }
        Err(_) => false,
    }
}

fn solve_with_fixed(p: &QpProblem, opts: QpOptions, fixed: &[usize]) -> Result<QpSolution> {
    let n = p.dim();
    let is_fixed: Vec<bool> = (0..n).map(|i| fixed.binary_search(&i).is_ok()).collect();
    let free: Vec<usize> = (0..n).filter(|i| !is_fixed[*i]).collect();
    let q_full = p.hessian.to_dense();
    let zf = DVector::from_fn(n, |i, _| if is_fixed[i] { p.lower[i] } else { 0.0 });
    let qzf = &q_full * &zf;
    let sub = |v: &DVector<f64>| DVector::from_fn(free.len(), |k, _| v[free[k]]);
    let reduced = QpProblem {
        hessian: Hessian::Dense(q_full.select_rows(&free).select_columns(&free)),
        q: sub(&(&p.q + &qzf)),
        lower: sub(&p.lower),
        upper: sub(&p.upper),
        a_eq: p.a_eq.select_columns(&free),
        b_eq: &p.b_eq - &p.a_eq * &zf,
    };
    let sol = solve_qp(&reduced, opts)?;
    let mut z = zf;
    for (k, &i) in free.iter().enumerate() {
        z[i] = sol.z[k];
    }
    // Multipliers of fixed variables absorb the remaining stationarity residual.
    let grad = &q_full * &z + &p.q + p.a_eq.transpose() * &sol.eq_multipliers;
    let mut zl = DVector::zeros(n);
    let mut zu = DVector::zeros(n);
    for (k, &i) in free.iter().enumerate() {
        zl[i] = sol.lower_multipliers[k];
        zu[i] = sol.upper_multipliers[k];
    }
    for &i in fixed {
        if grad[i] >= 0.0 {
            zl[i] = grad[i];
        } else {
            zu[i] = -grad[i];
        }
    }
    Ok(QpSolution {
        objective: p.objective(&z),
        z,
        eq_multipliers: sol.eq_multipliers,
        lower_multipliers: zl,
        upper_multipliers: zu,
        kkt_residual: sol.kkt_residual,
        gap: sol.gap,
        iterations: sol.iterations,
        status: sol.status,
    })
}

/// Fallback for box-only problems whose Newton systems cannot be factored.
fn projected_gradient(p: &QpProblem, b: &Bounds, z0: DVector<f64>, opts: QpOptions, done: usize) -> QpSolution {
    let n = p.dim();
    let project = |z: &mut DVector<f64>| {
        for i in 0..n {
            z[i] = z[i].clamp(p.lower[i], p.upper[i]);
        }
    };
    // Power iteration for a step size bound.
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lip = 1.0;
    for _ in 0..50 {
        let w = p.hessian.mul(&v);
        lip = w.norm().max(1e-12);
        v = w / lip;
    }
    let step = 1.0 / (1.01 * lip);
    let mut z = z0;
    project(&mut z);
    let iters = 20 * opts.max_iter.max(1) * 10;
    let mut kkt = f64::INFINITY;
    let (mut zl, mut zu) = (DVector::zeros(n), DVector::zeros(n));
    for _ in 0..iters {
        let g = p.hessian.mul(&z) + &p.q;
        let mut next = &z - step * &g;
        project(&mut next);
        z = next;
        let g = p.hessian.mul(&z) + &p.q;
        for i in 0..n {
            zl[i] = if b.has_lo[i] && z[i] - p.lower[i] <= 1e-12 { g[i].max(0.0) } else { 0.0 };
            zu[i] = if b.has_up[i] && p.upper[i] - z[i] <= 1e-12 { (-g[i]).max(0.0) } else { 0.0 };
        }
        let rd = &g - &zl + &zu;
        kkt = inf_norm(&rd) / (1.0 + inf_norm(&p.q));
        if kkt <= opts.tol {
            break;
        }
    }
    let objective = p.objective(&z);
    QpSolution {
        status: if kkt <= opts.tol { QpStatus::Optimal } else { QpStatus::MaxIter },
        objective,
        kkt_residual: kkt,
        gap: 0.0,
        iterations: done,
        eq_multipliers: DVector::zeros(0),
        lower_multipliers: zl,
        upper_multipliers: zu,
        z,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn interior_minimum() {
        let p = QpProblem::boxed(Hessian::Dense(DMatrix::identity(1, 1)), v(&[-1.0]), v(&[0.0]), v(&[2.0]));
        let s = solve_qp(&p, QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.z[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.objective, -0.5, epsilon = 1e-7);
    }

    #[test]
    fn active_upper_bound() {
        let p = QpProblem::boxed(Hessian::Dense(DMatrix::identity(1, 1)), v(&[-10.0]), v(&[0.0]), v(&[2.0]));
        let s = solve_qp(&p, QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.z[0], 2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.upper_multipliers[0], 8.0, epsilon = 1e-6);
    }

    /// Stationarity on the inactive box gives `z_i + μ = 0` together with
    /// `z_1 + z_2 = 1`, hence `z = (½, ½)` and `μ = −½`; the multiplier has
    /// magnitude ½ and its sign is fixed by `Qz + q + Aᵀμ = 0`.
    #[test]
    fn equality_multiplier_sign_convention() {
        let p = QpProblem::boxed(Hessian::Dense(DMatrix::identity(2, 2)), v(&[0.0, 0.0]), v(&[0.0, 0.0]), v(&[1.0, 1.0]))
            .with_equality(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0]));
        let s = solve_qp(&p, QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.z[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(s.z[1], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(s.eq_multipliers[0], -0.5, epsilon = 1e-7);
        let stat = &s.z + DVector::from_element(2, s.eq_multipliers[0]);
        assert!(stat.amax() < 1e-7);
    }

    #[test]
    fn infeasible_equality() {
        let p = QpProblem::boxed(Hessian::Dense(DMatrix::identity(2, 2)), v(&[0.0, 0.0]), v(&[0.0, 0.0]), v(&[1.0, 1.0]))
            .with_equality(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[3.0]));
        let s = solve_qp(&p, QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn fixed_and_free_variables() {
        // z0 fixed at 1, z1 free with no bounds: min ½(z0² + z1²) - z1 + z0 z1.
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = QpProblem::boxed(
            Hessian::Dense(q),
            v(&[0.0, -1.0]),
            v(&[1.0, f64::NEG_INFINITY]),
            v(&[1.0, f64::INFINITY]),
        );
        let s = solve_qp(&p, QpOptions::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.z[0], 1.0);
        assert_abs_diff_eq!(s.z[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn paired_matches_dense() {
        let k = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.3, 0.1, 0.3, 1.0]);
        let q = v(&[-1.0, 0.3, 0.2, 1.2, -0.1, 0.4]);
        let lo = DVector::zeros(6);
        let up = DVector::from_element(6, 1.0);
        let a = DMatrix::from_row_slice(1, 6, &[1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let b = v(&[0.0]);
        let dense = QpProblem::boxed(Hessian::Dense(Hessian::Paired(k.clone()).to_dense()), q.clone(), lo.clone(), up.clone())
            .with_equality(a.clone(), b.clone());
        let paired = QpProblem::boxed(Hessian::Paired(k), q, lo, up).with_equality(a, b);
        let s1 = solve_qp(&dense, QpOptions::default()).unwrap();
        let s2 = solve_qp(&paired, QpOptions::default()).unwrap();
        assert_eq!(s1.status, QpStatus::Optimal);
        assert_eq!(s2.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s1.objective, s2.objective, epsilon = 1e-7);
        assert_abs_diff_eq!(s1.eq_multipliers[0], s2.eq_multipliers[0], epsilon = 1e-5);
    }

    #[test]
    fn rejects_malformed() {
        let p = QpProblem::boxed(Hessian::Dense(DMatrix::identity(2, 2)), v(&[0.0]), v(&[0.0]), v(&[1.0]));
        assert!(solve_qp(&p, QpOptions::default()).is_err());
        let p = QpProblem::boxed(Hessian::Dense(DMatrix::identity(1, 1)), v(&[0.0]), v(&[2.0]), v(&[1.0]));
        assert!(solve_qp(&p, QpOptions::default()).is_err());
    }
}
