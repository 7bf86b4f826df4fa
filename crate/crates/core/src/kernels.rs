//! Matrix-valued kernels `K(x, x') ∈ ℝ^{M×M}`, parametric basis functions
//! `B_ν(x)`, and the conditionally-positive-definite machinery built on them.
//!
//! Vectors over anchors are stacked anchor-major: entry `n*M + m` is channel
//! `m` of anchor `n`. Basis coefficients are stacked the same way,
//! `θ = [θ_1; …; θ_{N_B}]` with each `θ_ν ∈ ℝ^M`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Location;

/// What the thin-plate radial function is applied to.
///
/// The classical thin-plate spline evaluates `r` at the Euclidean distance.
/// `SquaredDistance` evaluates it at `‖x − x'‖²`, which raises the effective
/// power of the distance to `2(2s − d)`; that variant is generally *not*
/// conditionally positive definite with respect to the affine basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TpsArgument {
    #[default]
    Distance,
    SquaredDistance,
}

/// Scalar kernels usable in the separable form `K = k(x, x') I_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScalarKernel {
    /// `exp(−‖x − x'‖² / width)`.
    Gaussian { width: f64 },
    Tps { order: u32, dim: usize, #[serde(default)] argument: TpsArgument },
}

impl ScalarKernel {
    pub fn eval(&self, x: &Location, x2: &Location) -> f64 {
        match self {
            ScalarKernel::Gaussian { width } => (-x.dist2(x2) / width).exp(),
            ScalarKernel::Tps { order, dim, argument } => {
                let z = match argument {
                    TpsArgument::Distance => x.dist(x2),
                    TpsArgument::SquaredDistance => x.dist2(x2),
                };
                radial_unchecked(z, *order, *dim)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ScalarKernel::Gaussian { width } => {
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(Error::invalid("width", format!("must be positive, got {width}")));
                }
            }
            ScalarKernel::Tps { order, dim, .. } => check_tps_order(*order, *dim)?,
        }
        Ok(())
    }
}

/// Declarative description of a matrix-valued kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// Diagonal kernel with `exp(−‖x − x'‖²/σ_m²)` on entry `(m, m)`.
    DiagonalGaussian { widths: Vec<f64> },
    /// Thin-plate radial kernel `r(·) I_M`.
    TpsCpd {
        order: u32,
        dim: usize,
        channels: usize,
        #[serde(default)]
        argument: TpsArgument,
    },
    /// `k(x, x') I_M` for a scalar kernel `k`.
    ScalarSeparable { kernel: ScalarKernel, channels: usize },
}

impl KernelSpec {
    pub fn gaussian(width: f64, channels: usize) -> Self {
        KernelSpec::DiagonalGaussian { widths: vec![width; channels] }
    }

    pub fn tps(order: u32, dim: usize, channels: usize) -> Self {
        KernelSpec::TpsCpd { order, dim, channels, argument: TpsArgument::Distance }
    }

    pub fn channels(&self) -> usize {
        match self {
            KernelSpec::DiagonalGaussian { widths } => widths.len(),
            KernelSpec::TpsCpd { channels, .. } | KernelSpec::ScalarSeparable { channels, .. } => *channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::DiagonalGaussian { widths } => {
                if widths.is_empty() {
                    return Err(Error::invalid("widths", "need one width per channel"));
                }
                if let Some(w) = widths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
                    return Err(Error::invalid("widths", format!("must be positive, got {w}")));
                }
                Ok(())
            }
            KernelSpec::TpsCpd { order, dim, channels, .. } => {
                if *channels == 0 {
                    return Err(Error::invalid("channels", "must be at least 1"));
                }
                check_tps_order(*order, *dim)
            }
            KernelSpec::ScalarSeparable { kernel, channels } => {
                if *channels == 0 {
                    return Err(Error::invalid("channels", "must be at least 1"));
                }
                kernel.validate()
            }
        }
    }

    /// The scalar factor `k` when the kernel equals `k(x, x') I_M`.
    pub fn scalar_factor(&self) -> Option<ScalarKernel> {
        match self {
            KernelSpec::DiagonalGaussian { widths } => {
                let w0 = widths[0];
                widths
                    .iter()
                    .all(|w| *w == w0)
                    .then_some(ScalarKernel::Gaussian { width: w0 })
            }
            KernelSpec::TpsCpd { order, dim, argument, .. } => Some(ScalarKernel::Tps {
                order: *order,
                dim: *dim,
                argument: *argument,
            }),
            KernelSpec::ScalarSeparable { kernel, .. } => Some(kernel.clone()),
        }
    }

    /// Whether the kernel is positive (semi)definite, as opposed to only
    /// conditionally positive definite.
    pub fn is_positive_definite(&self) -> bool {
        match self {
            KernelSpec::DiagonalGaussian { .. } => true,
            KernelSpec::TpsCpd { .. } => false,
            KernelSpec::ScalarSeparable { kernel, .. } => matches!(kernel, ScalarKernel::Gaussian { .. }),
        }
    }

    /// Diagonal of `K(x, x')`; every supported kernel is diagonal.
    pub fn diagonal(&self, x: &Location, x2: &Location) -> DVector<f64> {
        match self {
            KernelSpec::DiagonalGaussian { widths } => {
                let d2 = x.dist2(x2);
                DVector::from_iterator(widths.len(), widths.iter().map(|w| (-d2 / w).exp()))
            }
            _ => {
                let k = self.scalar_factor().expect("separable kernel").eval(x, x2);
                DVector::from_element(self.channels(), k)
            }
        }
    }

    /// Upper bound on `λ_max(K(x, x))` over the given points.
    pub fn max_self_eigenvalue(&self, points: &[Location]) -> f64 {
        points
            .iter()
            .map(|x| self.diagonal(x, x).iter().fold(0.0_f64, |a, v| a.max(v.abs())))
            .fold(0.0, f64::max)
    }
}

fn check_tps_order(order: u32, dim: usize) -> Result<()> {
    if order == 0 || dim == 0 {
        return Err(Error::invalid("order", "order s and dimension d must be positive"));
    }
    if 2 * order as i64 - dim as i64 <= 0 {
        return Err(Error::invalid(
            "order",
            format!("thin-plate kernel needs 2s - d > 0, got s = {order}, d = {dim}"),
        ));
    }
    Ok(())
}

/// Thin-plate radial function `r(z) = z^{2s−d} log z` for even `d`,
/// `z^{2s−d}` otherwise, with `r(0) = 0` for even `d`.
pub fn tps_radial(z: f64, s: u32, d: usize) -> Result<f64> {
    check_tps_order(s, d)?;
    if z < 0.0 {
        return Err(Error::invalid("z", "argument must be nonnegative"));
    }
    Ok(radial_unchecked(z, s, d))
}

fn radial_unchecked(z: f64, s: u32, d: usize) -> f64 {
    let power = (2 * s as i32) - d as i32;
    if d % 2 == 0 {
        if z == 0.0 {
            0.0
        } else {
            z.powi(power) * z.ln()
        }
    } else {
        z.powi(power)
    }
}

/// `K(x, x2)` as a dense `M×M` matrix.
pub fn kernel_block(spec: &KernelSpec, x: &Location, x2: &Location) -> Result<DMatrix<f64>> {
    if x.dim() != x2.dim() {
        return Err(Error::DimensionMismatch {
            context: "kernel_block locations",
            expected: x.dim(),
            got: x2.dim(),
        });
    }
    if let KernelSpec::TpsCpd { dim, .. } = spec {
        if *dim != x.dim() {
            return Err(Error::DimensionMismatch {
                context: "thin-plate kernel dimension",
                expected: *dim,
                got: x.dim(),
            });
        }
    }
    Ok(DMatrix::from_diagonal(&spec.diagonal(x, x2)))
}

/// Block kernel matrix over a set of anchors.
#[derive(Debug, Clone)]
pub enum KernelMatrix {
    Dense(DMatrix<f64>),
    /// `K = K̃ ⊗ I_M` with `K̃` the `N×N` scalar Gram matrix.
    Separable { scalar: DMatrix<f64>, channels: usize },
}

impl KernelMatrix {
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            KernelMatrix::Dense(k) => k.clone(),
            KernelMatrix::Separable { scalar, channels } => {
                scalar.kronecker(&DMatrix::identity(*channels, *channels))
            }
        }
    }

    pub fn size(&self) -> usize {
        match self {
            KernelMatrix::Dense(k) => k.nrows(),
            KernelMatrix::Separable { scalar, channels } => scalar.nrows() * channels,
        }
    }

    /// `K v` without materializing the Kronecker product.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            KernelMatrix::Dense(k) => k * v,
            KernelMatrix::Separable { scalar, channels } => {
                let m = *channels;
                let n = scalar.nrows();
                let mut out = DVector::zeros(n * m);
                for i in 0..n {
                    for j in 0..n {
                        let kij = scalar[(i, j)];
                        if kij != 0.0 {
                            for c in 0..m {
                                out[i * m + c] += kij * v[j * m + c];
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

/// Diagonal `M×M` blocks `K(x_n, x_{n'})` for every anchor pair, stored as
/// their diagonals. All supported kernels are diagonal.
pub(crate) fn diagonal_blocks(spec: &KernelSpec, anchors: &[Location]) -> Vec<Vec<DVector<f64>>> {
    let n = anchors.len();
    let mut out = vec![vec![DVector::zeros(0); n]; n];
    for i in 0..n {
        for j in i..n {
            let d = spec.diagonal(&anchors[i], &anchors[j]);
            out[j][i] = d.clone();
            out[i][j] = d;
        }
    }
    out
}

pub fn assemble_kernel(spec: &KernelSpec, anchors: &[Location]) -> Result<KernelMatrix> {
    if anchors.is_empty() {
        return Err(Error::EmptyInput("kernel anchors"));
    }
    spec.validate()?;
    let n = anchors.len();
    let m = spec.channels();
    if let (KernelSpec::TpsCpd { .. } | KernelSpec::ScalarSeparable { .. }, Some(k)) = (spec, spec.scalar_factor()) {
        let scalar = DMatrix::from_fn(n, n, |i, j| k.eval(&anchors[i], &anchors[j]));
        return Ok(KernelMatrix::Separable { scalar, channels: m });
    }
    let blocks = diagonal_blocks(spec, anchors);
    let mut dense = DMatrix::zeros(n * m, n * m);
    for i in 0..n {
        for j in 0..n {
            for c in 0..m {
                dense[(i * m + c, j * m + c)] = blocks[i][j][c];
            }
        }
    }
    Ok(KernelMatrix::Dense(dense))
}

/// Parametric basis `{B_ν(x)}`, each an `M×M` matrix function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisSpec {
    None,
    /// `B_1 = I_M`, `B_{1+j} = x_j I_M`.
    TpsPolynomial { dim: usize },
    /// A single diagonal basis function with entry `1/(δ + ‖x − χ_m‖^γ)` for
    /// each transmitter `m` and zero on the noise channel.
    TransmitterPathloss { anchors: Vec<Location>, exponent: f64, offset: f64 },
}

impl BasisSpec {
    /// Number of basis functions `N_B`.
    pub fn count(&self) -> usize {
        match self {
            BasisSpec::None => 0,
            BasisSpec::TpsPolynomial { dim } => 1 + dim,
            BasisSpec::TransmitterPathloss { .. } => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        match self {
            BasisSpec::None => Ok(()),
            BasisSpec::TpsPolynomial { dim } => {
                if *dim == 0 {
                    Err(Error::invalid("dim", "must be positive"))
                } else {
                    Ok(())
                }
            }
            BasisSpec::TransmitterPathloss { anchors, exponent, offset } => {
                if !(*offset > 0.0) {
                    return Err(Error::invalid("offset", "pathloss offset must be positive"));
                }
                if !exponent.is_finite() {
                    return Err(Error::invalid("exponent", "must be finite"));
                }
                if anchors.len() + 1 != channels {
                    return Err(Error::DimensionMismatch {
                        context: "pathloss basis transmitters (channels - 1)",
                        expected: channels.saturating_sub(1),
                        got: anchors.len(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Scalar factors `b_ν(x)` when every `B_ν(x) = b_ν(x) I_M`.
    pub fn scalar_values(&self, x: &Location) -> Option<Vec<f64>> {
        match self {
            BasisSpec::None => Some(Vec::new()),
            BasisSpec::TpsPolynomial { .. } => {
                let mut v = Vec::with_capacity(1 + x.dim());
                v.push(1.0);
                v.extend_from_slice(x.coords());
                Some(v)
            }
            BasisSpec::TransmitterPathloss { .. } => None,
        }
    }

    /// `B(x) = [B_1(x), …, B_{N_B}(x)]` as an `M × N_B M` matrix.
    pub fn eval(&self, x: &Location, channels: usize) -> DMatrix<f64> {
        let nb = self.count();
        let mut out = DMatrix::zeros(channels, nb * channels);
        match self {
            BasisSpec::None => {}
            BasisSpec::TpsPolynomial { .. } => {
                let vals = self.scalar_values(x).expect("separable basis");
                for (nu, b) in vals.iter().enumerate() {
                    for c in 0..channels {
                        out[(c, nu * channels + c)] = *b;
                    }
                }
            }
            BasisSpec::TransmitterPathloss { anchors, exponent, offset } => {
                for (c, chi) in anchors.iter().enumerate().take(channels) {
                    out[(c, c)] = 1.0 / (offset + x.dist(chi).powf(*exponent));
                }
            }
        }
        out
    }
}

/// Stacks `B_ν(x_n)` into the `NM × N_B M` matrix whose `(n, ν)` block is
/// `B_ν(x_n)`.
pub fn assemble_basis_matrix(spec: &BasisSpec, anchors: &[Location], channels: usize) -> Result<DMatrix<f64>> {
    spec.validate(channels)?;
    if let BasisSpec::TpsPolynomial { dim } = spec {
        if let Some(bad) = anchors.iter().find(|a| a.dim() != *dim) {
            return Err(Error::DimensionMismatch {
                context: "polynomial basis location",
                expected: *dim,
                got: bad.dim(),
            });
        }
    }
    let n = anchors.len();
    let cols = spec.count() * channels;
    let mut out = DMatrix::zeros(n * channels, cols);
    for (i, x) in anchors.iter().enumerate() {
        out.view_mut((i * channels, 0), (channels, cols)).copy_from(&spec.eval(x, channels));
    }
    Ok(out)
}

/// Scalar basis matrix `B̌` (`N × N_B`) of a separable basis.
pub fn assemble_scalar_basis(spec: &BasisSpec, anchors: &[Location]) -> Option<DMatrix<f64>> {
    let nb = spec.count();
    let rows: Option<Vec<Vec<f64>>> = anchors.iter().map(|x| spec.scalar_values(x)).collect();
    let rows = rows?;
    Some(DMatrix::from_fn(anchors.len(), nb, |i, j| rows[i][j]))
}

/// `(BᵀB)⁻¹` for a tall basis matrix, rejecting ill-conditioned Gram matrices.
pub(crate) fn gram_inverse(basis_matrix: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let gram = basis_matrix.transpose() * basis_matrix;
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if !(max > 0.0) || min <= max * 1e-12 {
        return Err(Error::Singular(format!(
            "BᵀB of basis `{what}` (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    gram.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("BᵀB of basis `{what}`")))
}

/// Orthogonal projector `I − B(BᵀB)⁻¹Bᵀ` onto the null space of `Bᵀ`.
pub fn projector(basis_matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rows = basis_matrix.nrows();
    if basis_matrix.ncols() == 0 {
        return Ok(DMatrix::identity(rows, rows));
    }
    let inv = gram_inverse(basis_matrix, "projector input")?;
    let mut p = -(basis_matrix * inv * basis_matrix.transpose());
    for i in 0..rows {
        p[(i, i)] += 1.0;
    }
    Ok((&p + p.transpose()) * 0.5)
}

/// Empirical check of conditional positive definiteness: draws random
/// coefficient vectors, projects them onto the null space of `Bᵀ` and tests
/// `cᵀKc ≥ −1e-9 ‖c‖² ‖K‖`.
pub fn cpd_check<R: Rng + ?Sized>(
    spec: &KernelSpec,
    basis: &BasisSpec,
    anchors: &[Location],
    trials: usize,
    rng: &mut R,
) -> Result<bool> {
    let m = spec.channels();
    let k = assemble_kernel(spec, anchors)?.to_dense();
    let b = assemble_basis_matrix(basis, anchors, m)?;
    let p = projector(&b)?;
    let scale = k.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    for _ in 0..trials {
        let raw = DVector::from_fn(k.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = &p * raw;
        let q = c.dot(&(&k * &c));
        if q < -1e-9 * scale * c.norm_squared().max(1.0) {
            return Ok(false);
        }
    }
    Ok(true)
}
