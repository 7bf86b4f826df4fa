//! ε-insensitive support-vector estimators solved through their duals.
//!
//! With `d = α − β`, `W = Σ w_j` and `s = 2λW`, every variant solves
//!
//! ```text
//!     minimize    ½ dᵀK̃d − s(ȳ − ε̄)ᵀα + s(ȳ + ε̄)ᵀβ
//!     subject to  0 ≤ α, β ≤ w,   G d = 0
//! ```
//!
//! where `K̃ = Φ̄₀ᵀKΦ̄₀` (nonparametric, semiparametric) or
//! `Φ̄₀ᵀP⊥K′P⊥Φ̄₀` (CPD) and `G = BᵀΦ̄₀` (absent for nonparametric fits).
//! The unscaled dual objective is the QP objective divided by `s`.

use nalgebra::{DMatrix, DVector, SVD};

use super::separable::{assemble_ktilde_separable, theta_recovery_separable};
use super::{assemble_design, DesignMatrices, MapEstimate};
use crate::error::{Error, Result};
use crate::kernels::{
    assemble_basis_matrix, assemble_kernel, assemble_scalar_basis, gram_inverse, projector,
    BasisSpec, KernelSpec,
};
use crate::model::MeasurementRecord;
use crate::qp::{solve_qp, Hessian, QpOptions, QpProblem, QpStatus};

#[derive(Debug, Clone, Copy)]
pub struct SvmOptions {
    pub qp: QpOptions,
    /// Use the Kronecker fast path when kernel and basis are separable.
    pub separable_fast_path: bool,
    /// Largest KKT residual accepted from a solve that hit the iteration cap.
    pub accept_residual: f64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions { qp: QpOptions::default(), separable_fast_path: true, accept_residual: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    /// Equality multipliers (unscaled); empty for nonparametric fits.
    pub mu: DVector<f64>,
    pub xi: DVector<f64>,
    pub zeta: DVector<f64>,
    /// `Σ w(ξ + ζ) + λW·cᵀKc` at the recovered primal point.
    pub primal_objective: f64,
    /// Unscaled dual objective in minimization form; the dual value is its
    /// negative.
    pub dual_objective: f64,
    /// `primal_objective + dual_objective`.
    pub gap: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

pub fn fit_svm_nonparametric(
    records: &[MeasurementRecord],
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<(MapEstimate, DualSolution)> {
    fit_svm_nonparametric_design(&assemble_design(records)?, kernel, lambda, SvmOptions::default())
}

pub fn fit_svm_semiparametric(
    records: &[MeasurementRecord],
    kernel: &KernelSpec,
    basis: &BasisSpec,
    lambda: f64,
) -> Result<(MapEstimate, DualSolution)> {
    fit_svm_semiparametric_design(&assemble_design(records)?, kernel, basis, lambda, SvmOptions::default())
}

pub fn fit_svm_cpd(
    records: &[MeasurementRecord],
    kernel: &KernelSpec,
    basis: &BasisSpec,
    lambda: f64,
) -> Result<(MapEstimate, DualSolution)> {
    fit_svm_cpd_design(&assemble_design(records)?, kernel, basis, lambda, SvmOptions::default())
}

fn check_common(design: &DesignMatrices, kernel: &KernelSpec, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", "must be positive and finite"));
    }
    kernel.validate()?;
    if kernel.channels() != design.channels {
        return Err(Error::DimensionMismatch {
            context: "kernel channels",
            expected: design.channels,
            got: kernel.channels(),
        });
    }
    Ok(())
}

pub fn fit_svm_nonparametric_design(
    design: &DesignMatrices,
    kernel: &KernelSpec,
    lambda: f64,
    opts: SvmOptions,
) -> Result<(MapEstimate, DualSolution)> {
    check_common(design, kernel, lambda)?;
    let ktilde = design.k0(kernel);
    let g = DMatrix::zeros(0, design.measurement_count());
    let dual = solve_dual(design, ktilde, &g, lambda, opts)?;
    let s = scale(design, lambda);
    let c = design.phi0_mul(&dual.d) / s;
    Ok((
        MapEstimate {
            anchors: design.anchors.clone(),
            c,
            theta: DVector::zeros(0),
            kernel: kernel.clone(),
            basis: BasisSpec::None,
            lambda,
        },
        dual.solution,
    ))
}

pub fn fit_svm_semiparametric_design(
    design: &DesignMatrices,
    kernel: &KernelSpec,
    basis: &BasisSpec,
    lambda: f64,
    opts: SvmOptions,
) -> Result<(MapEstimate, DualSolution)> {
    check_common(design, kernel, lambda)?;
    if basis.is_empty() {
        return fit_svm_nonparametric_design(design, kernel, lambda, opts);
    }
    if !kernel.is_positive_definite() {
        return Err(Error::invalid("kernel", "semiparametric fit needs a positive definite kernel; use the CPD fit"));
    }
    let m = design.channels;
    let b = assemble_basis_matrix(basis, &design.anchors, m)?;
    let keep = nonzero_columns(&b);
    let g_full = design.basis_tr_phi0(&b);
    let g = select_rows(&g_full, &keep);
    check_full_row_rank(&g)?;
    let ktilde = design.k0(kernel);
    let dual = solve_dual(design, ktilde, &g, lambda, opts)?;
    let s = scale(design, lambda);
    let c = design.phi0_mul(&dual.d) / s;
    let theta = scatter(&dual.solution.mu, &keep, b.ncols());
    Ok((
        MapEstimate { anchors: design.anchors.clone(), c, theta, kernel: kernel.clone(), basis: basis.clone(), lambda },
        dual.solution,
    ))
}

pub fn fit_svm_cpd_design(
    design: &DesignMatrices,
    kernel: &KernelSpec,
    basis: &BasisSpec,
    lambda: f64,
    opts: SvmOptions,
) -> Result<(MapEstimate, DualSolution)> {
    check_common(design, kernel, lambda)?;
    if basis.is_empty() {
        return Err(Error::invalid("basis", "CPD fit needs a nonempty basis"));
    }
    basis.validate(design.channels)?;
    let s = scale(design, lambda);
    let separable = match (kernel.scalar_factor(), assemble_scalar_basis(basis, &design.anchors)) {
        (Some(k), Some(b)) if opts.separable_fast_path => Some((k, b)),
        _ => None,
    };
    let (c, theta, sol) = match separable {
        Some((scalar_kernel, b_scalar)) => {
            let n = design.anchor_count();
            let kmat = DMatrix::from_fn(n, n, |i, j| scalar_kernel.eval(&design.anchors[i], &design.anchors[j]));
            let keep = nonzero_columns(&b_scalar);
            let b_scalar = select_cols(&b_scalar, &keep);
            gram_inverse(&b_scalar, "scalar basis")?;
            let g = separable_g(design, &b_scalar);
            check_full_row_rank(&g)?;
            let ktilde = assemble_ktilde_separable(&kmat, &b_scalar, &design.phi, &design.anchor_of)?;
            let dual = solve_dual(design, ktilde, &g, lambda, opts)?;
            let c = project_separable(&b_scalar, &(design.phi0_mul(&dual.d) / s), design.channels)?;
            let theta_kept = theta_recovery_separable(&dual.solution.mu, &kmat, &b_scalar, &c)?;
            let m = design.channels;
            let keep_channels: Vec<usize> =
                keep.iter().flat_map(|&nu| (0..m).map(move |ch| nu * m + ch)).collect();
            let theta = scatter(&theta_kept, &keep_channels, basis.count() * m);
            (c, theta, dual.solution)
        }
        None => {
            let m = design.channels;
            let b_full = assemble_basis_matrix(basis, &design.anchors, m)?;
            let keep = nonzero_columns(&b_full);
            let b = select_cols(&b_full, &keep);
            let p = projector(&b)?;
            let k = assemble_kernel(kernel, &design.anchors)?.to_dense();
            let g = design.basis_tr_phi0(&b);
            check_full_row_rank(&g)?;
            let pk = design.phi0().transpose() * &p;
            let ktilde = &pk * &k * pk.transpose();
            let ktilde = (&ktilde + ktilde.transpose()) * 0.5;
            let dual = solve_dual(design, ktilde, &g, lambda, opts)?;
            let c = &p * (design.phi0_mul(&dual.d) / s);
            let theta_kept = &dual.solution.mu - gram_inverse(&b, "basis")? * b.transpose() * (&k * &c);
            let theta = scatter(&theta_kept, &keep, b_full.ncols());
            (c, theta, dual.solution)
        }
    };
    Ok((
        MapEstimate { anchors: design.anchors.clone(), c, theta, kernel: kernel.clone(), basis: basis.clone(), lambda },
        sol,
    ))
}

fn scale(design: &DesignMatrices, lambda: f64) -> f64 {
    2.0 * lambda * design.total_weight()
}

struct Dual {
    d: DVector<f64>,
    solution: DualSolution,
}

fn solve_dual(design: &DesignMatrices, ktilde: DMatrix<f64>, g: &DMatrix<f64>, lambda: f64, opts: SvmOptions) -> Result<Dual> {
    let np = design.measurement_count();
    let s = scale(design, lambda);
    let w = &design.weights;
    let mut q = DVector::zeros(2 * np);
    for j in 0..np {
        q[j] = -s * (design.y[j] - design.eps[j]);
        q[np + j] = s * (design.y[j] + design.eps[j]);
    }
    let mut upper = DVector::zeros(2 * np);
    upper.rows_mut(0, np).copy_from(w);
    upper.rows_mut(np, np).copy_from(w);
    let mut problem = QpProblem::boxed(Hessian::Paired(ktilde.clone()), q, DVector::zeros(2 * np), upper);
    if g.nrows() > 0 {
        let mut a = DMatrix::zeros(g.nrows(), 2 * np);
        a.view_mut((0, 0), (g.nrows(), np)).copy_from(g);
        a.view_mut((0, np), (g.nrows(), np)).copy_from(&(-g));
        problem = problem.with_equality(a, DVector::zeros(g.nrows()));
    }
    let sol = solve_qp(&problem, opts.qp)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::MaxIter if sol.kkt_residual <= opts.accept_residual => {}
        QpStatus::MaxIter => {
            return Err(Error::Solver(format!(
                "dual QP stopped after {} iterations with KKT residual {:e}",
                sol.iterations, sol.kkt_residual
            )))
        }
        QpStatus::Infeasible => return Err(Error::Solver("dual QP reported infeasible".into())),
    }
    let alpha = sol.z.rows(0, np).into_owned();
    let beta = sol.z.rows(np, np).into_owned();
    let d = &alpha - &beta;
    let mu = &sol.eq_multipliers / s;
    let kd = &ktilde * &d;
    let mut pred = &kd / s;
    if g.nrows() > 0 {
        pred += g.transpose() * &mu;
    }
    let xi = DVector::from_fn(np, |j, _| (design.y[j] - design.eps[j] - pred[j]).max(0.0));
    let zeta = DVector::from_fn(np, |j, _| (pred[j] - design.y[j] - design.eps[j]).max(0.0));
    let loss: f64 = (0..np).map(|j| w[j] * (xi[j] + zeta[j])).sum();
    let penalty = d.dot(&kd) / (s * s);
    let primal = loss + lambda * design.total_weight() * penalty;
    let dual_objective = sol.objective / s;
    Ok(Dual {
        d,
        solution: DualSolution {
            alpha,
            beta,
            mu,
            xi,
            zeta,
            primal_objective: primal,
            dual_objective,
            gap: primal + dual_objective,
            iterations: sol.iterations,
            status: sol.status,
        },
    })
}

/// Indices of columns that are not identically zero.
fn nonzero_columns(b: &DMatrix<f64>) -> Vec<usize> {
    (0..b.ncols()).filter(|&j| b.column(j).iter().any(|v| *v != 0.0)).collect()
}

fn select_cols(b: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(b.nrows(), keep.len(), |i, j| b[(i, keep[j])])
}

fn select_rows(g: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(keep.len(), g.ncols(), |i, j| g[(keep[i], j)])
}

fn scatter(v: &DVector<f64>, keep: &[usize], len: usize) -> DVector<f64> {
    let mut out = DVector::zeros(len);
    for (i, &k) in keep.iter().enumerate() {
        out[k] = v[i];
    }
    out
}

fn check_full_row_rank(g: &DMatrix<f64>) -> Result<()> {
    let rows = g.nrows();
    if rows == 0 {
        return Ok(());
    }
    if rows > g.ncols() {
        return Err(Error::RankDeficient(format!(
            "BᵀΦ̄₀ has {rows} rows but only {} measurements",
            g.ncols()
        )));
    }
    let sv = SVD::new(g.clone(), false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(Error::RankDeficient(format!(
            "BᵀΦ̄₀ is not full row rank (singular values in [{min:e}, {max:e}])"
        )));
    }
    Ok(())
}

/// `G = (B̌ ⊗ I_M)ᵀΦ̄₀`: row `ν·M + ch`, column `j` is `B̌[a_j, ν]·φ_j[ch]`.
fn separable_g(design: &DesignMatrices, b_scalar: &DMatrix<f64>) -> DMatrix<f64> {
    let m = design.channels;
    let nb = b_scalar.ncols();
    DMatrix::from_fn(nb * m, design.measurement_count(), |r, j| {
        b_scalar[(design.anchor_of[j], r / m)] * design.phi[(r % m, j)]
    })
}

/// `(P̌⊥ ⊗ I_M) c`.
fn project_separable(b_scalar: &DMatrix<f64>, c: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
    let n = b_scalar.nrows();
    let p = projector(b_scalar)?;
    let cm = DMatrix::from_fn(n, m, |a, ch| c[a * m + ch]);
    let pc = p * cm;
    Ok(DVector::from_fn(n * m, |i, _| pc[(i / m, i % m)]))
}
