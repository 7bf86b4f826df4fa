//! Fast assembly for kernels and bases of the form `k(x, x') I_M` and
//! `b_ν(x) I_M`, where every `MN`-sized product collapses to an `N`-sized one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::gram_inverse;

fn scalar_projector(basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = basis.nrows();
    if basis.ncols() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    let inv = gram_inverse(basis, "scalar basis")?;
    let mut p = -(basis * inv * basis.transpose());
    for i in 0..n {
        p[(i, i)] += 1.0;
    }
    Ok(p)
}

/// `K̃ = (P̌ǨP̌ ⊗ 1_P1_Pᵀ) ∘ Φ̄ᵀΦ̄`, generalized to an arbitrary number of
/// measurements per anchor: entry `(j, k)` is `(P̌ǨP̌)[a_j, a_k] · φ_jᵀφ_k`.
///
/// `kernel` is the `N×N` scalar Gram matrix, `basis` the `N×N_B` scalar basis
/// matrix (possibly with zero columns) and `phi_bar` the `M×NP` stacked filter
/// weights with measurement `j` taken at anchor `anchor_of[j]`.
pub fn assemble_ktilde_separable(
    kernel: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    phi_bar: &DMatrix<f64>,
    anchor_of: &[usize],
) -> Result<DMatrix<f64>> {
    let n = kernel.nrows();
    if kernel.ncols() != n || basis.nrows() != n {
        return Err(Error::DimensionMismatch { context: "separable kernel/basis", expected: n, got: basis.nrows() });
    }
    if phi_bar.ncols() != anchor_of.len() {
        return Err(Error::DimensionMismatch {
            context: "separable measurement map",
            expected: phi_bar.ncols(),
            got: anchor_of.len(),
        });
    }
    if let Some(a) = anchor_of.iter().find(|a| **a >= n) {
        return Err(Error::invalid("anchor_of", format!("anchor {a} out of range")));
    }
    let p = scalar_projector(basis)?;
    let pkp = &p * kernel * &p;
    let gram = phi_bar.transpose() * phi_bar;
    let np = anchor_of.len();
    Ok(DMatrix::from_fn(np, np, |j, k| pkp[(anchor_of[j], anchor_of[k])] * gram[(j, k)]))
}

/// `θ = μ − [(B̌ᵀB̌)⁻¹B̌ᵀǨ ⊗ I_M] c̄`.
pub fn theta_recovery_separable(
    mu: &DVector<f64>,
    kernel: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    c_bar: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = kernel.nrows();
    let nb = basis.ncols();
    if nb == 0 {
        return Err(Error::EmptyInput("separable basis"));
    }
    if c_bar.len() % n != 0 || mu.len() != nb * (c_bar.len() / n) {
        return Err(Error::DimensionMismatch {
            context: "separable theta recovery",
            expected: nb * (c_bar.len() / n.max(1)),
            got: mu.len(),
        });
    }
    let m = c_bar.len() / n;
    let g = gram_inverse(basis, "scalar basis")? * basis.transpose() * kernel;
    let mut theta = mu.clone();
    for nu in 0..nb {
        for a in 0..n {
            let w = g[(nu, a)];
            for ch in 0..m {
                theta[nu * m + ch] -= w * c_bar[a * m + ch];
            }
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_basis_reduces_to_plain_product() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let phi = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.2, 0.0, 1.0, 0.4]);
        let anchor_of = [0, 0, 1];
        let kt = assemble_ktilde_separable(&k, &DMatrix::zeros(2, 0), &phi, &anchor_of).unwrap();
        let gram = phi.transpose() * &phi;
        for j in 0..3 {
            for l in 0..3 {
                assert_eq!(kt[(j, l)], k[(anchor_of[j], anchor_of[l])] * gram[(j, l)]);
            }
        }
    }

    #[test]
    fn zero_coefficients_return_multipliers() {
        let k = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 8.0, 1.0, 0.0, 1.0, 8.0, 1.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let mu = DVector::from_column_slice(&[0.1, 0.2, 0.3, 0.4]);
        let theta = theta_recovery_separable(&mu, &k, &b, &DVector::zeros(6)).unwrap();
        assert_eq!(theta, mu);
    }
}
