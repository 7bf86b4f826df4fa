//! Batch estimators of the channel-gain field `l(x)`.
//!
//! All estimators return a [`MapEstimate`] of the form
//! `l̂(x) = Σ_n K(x, x_n) c_n + Σ_ν B_ν(x) θ_ν`.
//!
//! Regularization follows the convention of the constrained primal
//! `Σ (ξ + ζ) + λ·NP·cᵀKc`: the `1/(NP)` of the sample-average loss is
//! absorbed into `λ`.

mod design;
mod ridge;
mod separable;
mod svm;

pub use design::{assemble_design, DesignMatrices};
pub use ridge::{fit_ridge, fit_ridge_design, ridge_objective};
pub use separable::{assemble_ktilde_separable, theta_recovery_separable};
pub use svm::{
    fit_svm_cpd, fit_svm_cpd_design, fit_svm_nonparametric, fit_svm_nonparametric_design, fit_svm_semiparametric,
    fit_svm_semiparametric_design, DualSolution, SvmOptions,
};

use nalgebra::DVector;

use crate::kernels::{BasisSpec, KernelSpec};
use crate::model::{Location, PowerVector};

#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub anchors: Vec<Location>,
    /// Expansion coefficients, anchor-major (`MN`).
    pub c: DVector<f64>,
    /// Parametric coefficients (`N_B M`); empty for nonparametric fits.
    pub theta: DVector<f64>,
    pub kernel: KernelSpec,
    pub basis: BasisSpec,
    pub lambda: f64,
}

impl MapEstimate {
    pub fn channels(&self) -> usize {
        self.kernel.channels()
    }

    /// `l̂(x)`.
    pub fn evaluate(&self, x: &Location) -> PowerVector {
        let m = self.channels();
        let mut out = DVector::zeros(m);
        for (n, anchor) in self.anchors.iter().enumerate() {
            let d = self.kernel.diagonal(x, anchor);
            for ch in 0..m {
                out[ch] += d[ch] * self.c[n * m + ch];
            }
        }
        if !self.theta.is_empty() {
            out += self.basis.eval(x, m) * &self.theta;
        }
        out
    }

    /// RKHS penalty `cᵀKc` of the nonparametric part.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let m = self.channels();
        let mut total = 0.0;
        for (i, xi) in self.anchors.iter().enumerate() {
            for (j, xj) in self.anchors.iter().enumerate() {
                let d = self.kernel.diagonal(xi, xj);
                for ch in 0..m {
                    total += self.c[i * m + ch] * d[ch] * self.c[j * m + ch];
                }
            }
        }
        total
    }
}

/// Free-function form of [`MapEstimate::evaluate`].
pub fn evaluate_map(est: &MapEstimate, x: &Location) -> PowerVector {
    est.evaluate(x)
}
