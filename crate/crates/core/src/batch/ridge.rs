use nalgebra::{DMatrix, DVector, LU};

use super::{assemble_design, DesignMatrices, MapEstimate};
use crate::error::{Error, Result};
use crate::kernels::{BasisSpec, KernelSpec};
use crate::model::MeasurementRecord;

/// Kernel ridge regression on un-quantized powers `π̂`.
///
/// Solves `c̄ = (Φ̄₀Φ̄₀ᵀK + λ·NP·I)⁻¹ Φ̄₀ π̂` through the equivalent
/// measurement-space system `c̄ = Φ̄₀ (K₀ + λ·NP·I)⁻¹ π̂`.
pub fn fit_ridge(records: &[MeasurementRecord], kernel: &KernelSpec, lambda: f64) -> Result<MapEstimate> {
    if let Some(i) = records.iter().position(|r| r.raw.is_none()) {
        return Err(Error::MissingRaw(i));
    }
    fit_ridge_design(&assemble_design(records)?, kernel, lambda)
}

pub fn fit_ridge_design(design: &DesignMatrices, kernel: &KernelSpec, lambda: f64) -> Result<MapEstimate> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    kernel.validate()?;
    let raw = design.raw.as_ref().ok_or(Error::MissingRaw(0))?;
    let weight = design.total_weight();
    let mut system = design.k0(kernel);
    for j in 0..system.nrows() {
        system[(j, j)] += lambda * weight;
    }
    let a = match system.clone().cholesky() {
        Some(ch) => ch.solve(raw),
        None => LU::new(system)
            .solve(raw)
            .ok_or_else(|| Error::Singular("ridge system".into()))?,
    };
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("ridge system".into()));
    }
    Ok(MapEstimate {
        anchors: design.anchors.clone(),
        c: design.phi0_mul(&a),
        theta: DVector::zeros(0),
        kernel: kernel.clone(),
        basis: BasisSpec::None,
        lambda,
    })
}

/// `Σ (π̂ − φᵀ l̂(x))² + λ·NP·cᵀKc` for coefficients `c` on the design anchors.
pub fn ridge_objective(design: &DesignMatrices, kernel: &KernelSpec, k: &DMatrix<f64>, c: &DVector<f64>, lambda: f64) -> f64 {
    let _ = kernel;
    let kc = k * c;
    let pred = design.phi0_tr_mul(&kc);
    let raw = design.raw.as_ref().expect("ridge objective needs raw values");
    let loss: f64 = (raw - pred).iter().map(|e| e * e).sum();
    loss + lambda * design.total_weight() * c.dot(&kc)
}
