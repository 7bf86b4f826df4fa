//! Domain types shared by the estimators: locations, per-channel power
//! vectors, filter weights, the spectral basis and quantized measurement
//! records.
//!
//! The received PSD at a location is modelled as `Γ(x, f) = Σ_m l_m(x) Ψ_m(f)`,
//! where every `Ψ_m` integrates to one. A sensor whose receive filter has
//! squared magnitude response `|G(f)|²` measures the ensemble power
//! `φᵀ l(x)` with `φ_m = ∫ |G(f)|² Ψ_m(f) df`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the `d`-dimensional region of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location(pub Vec<f64>);

impl Location {
    pub fn new(coords: Vec<f64>) -> Self {
        Location(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dist2(&self, other: &Location) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, other: &Location) -> f64 {
        self.dist2(other).sqrt()
    }

    /// Exact coordinate equality; used to merge repeated sensor positions.
    pub fn same_point(&self, other: &Location) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits() || a == b)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Location {
    fn from(v: Vec<f64>) -> Self {
        Location(v)
    }
}

/// Per-channel received powers `l(x)`; the last entry is the noise floor.
pub type PowerVector = DVector<f64>;

/// Filter power-response weights `φ` of one measurement.
pub type FilterWeight = DVector<f64>;

/// Piecewise-constant function over a strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    pub edges: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(edges: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::invalid("edges", "need at least two grid edges"));
        }
        if values.len() + 1 != edges.len() {
            return Err(Error::DimensionMismatch {
                context: "piecewise-constant values",
                expected: edges.len() - 1,
                got: values.len(),
            });
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("edges", "grid must be strictly increasing"));
        }
        Ok(PiecewiseConstant { edges, values })
    }

    pub fn eval(&self, f: f64) -> f64 {
        let last = self.edges.len() - 1;
        if f < self.edges[0] || f >= self.edges[last] {
            return 0.0;
        }
        let cell = self.edges.partition_point(|&e| e <= f) - 1;
        self.values[cell]
    }

    pub fn integral(&self) -> f64 {
        self.edges
            .windows(2)
            .zip(&self.values)
            .map(|(w, v)| (w[1] - w[0]) * v)
            .sum()
    }

    fn same_grid(&self, other: &PiecewiseConstant) -> bool {
        self.edges.len() == other.edges.len()
            && self
                .edges
                .iter()
                .zip(&other.edges)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }
}

/// The normalized band densities `Ψ_1..Ψ_M` on a shared frequency grid.
/// Entry `M` conventionally holds the noise PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    bands: Vec<PiecewiseConstant>,
}

impl SpectralBasis {
    pub fn new(bands: Vec<PiecewiseConstant>) -> Result<Self> {
        let first = bands.first().ok_or(Error::EmptyInput("spectral basis"))?;
        for (m, band) in bands.iter().enumerate() {
            if !band.same_grid(first) {
                return Err(Error::invalid("bands", format!("band {m} uses a different grid")));
            }
            if band.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::invalid("bands", format!("band {m} has a negative density")));
            }
            let mass = band.integral();
            if (mass - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "bands",
                    format!("band {m} integrates to {mass}, expected 1"),
                ));
            }
        }
        Ok(SpectralBasis { bands })
    }

    /// Uniform densities on consecutive, disjoint intervals `[edges[m], edges[m+1])`.
    pub fn disjoint_bands(edges: &[f64]) -> Result<Self> {
        let cells = edges.len().saturating_sub(1);
        let bands = (0..cells)
            .map(|m| {
                let values = (0..cells)
                    .map(|k| if k == m { 1.0 / (edges[m + 1] - edges[m]) } else { 0.0 })
                    .collect();
                PiecewiseConstant::new(edges.to_vec(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        SpectralBasis::new(bands)
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn bands(&self) -> &[PiecewiseConstant] {
        &self.bands
    }

    pub fn edges(&self) -> &[f64] {
        &self.bands[0].edges
    }
}

/// `Γ(x, f) = Σ_m l_m Ψ_m(f)` for the gains `l` observed at some location.
pub fn evaluate_psd(basis: &SpectralBasis, gains: &PowerVector, f: f64) -> Result<f64> {
    if gains.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluate_psd gains",
            expected: basis.len(),
            got: gains.len(),
        });
    }
    Ok(basis
        .bands
        .iter()
        .zip(gains.iter())
        .map(|(band, l)| l * band.eval(f))
        .sum())
}

/// Expected power `φᵀ l` at the output of a receive filter.
pub fn ensemble_power(phi: &FilterWeight, gains: &PowerVector) -> Result<f64> {
    if phi.len() != gains.len() {
        return Err(Error::DimensionMismatch {
            context: "ensemble_power",
            expected: gains.len(),
            got: phi.len(),
        });
    }
    Ok(phi.dot(gains))
}

/// Overlap integrals `φ_m = ∫ |G(f)|² Ψ_m(f) df`, exact for piecewise-constant
/// inputs on a common grid.
pub fn compute_phi(basis: &SpectralBasis, filter_response_sq: &PiecewiseConstant) -> Result<FilterWeight> {
    if !basis.bands[0].same_grid(filter_response_sq) {
        return Err(Error::invalid(
            "filter_response_sq",
            "frequency grid differs from the spectral basis grid",
        ));
    }
    if filter_response_sq.values.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid("filter_response_sq", "squared response must be nonnegative"));
    }
    let widths: Vec<f64> = filter_response_sq.edges.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(DVector::from_iterator(
        basis.len(),
        basis.bands.iter().map(|band| {
            band.values
                .iter()
                .zip(&filter_response_sq.values)
                .zip(&widths)
                .map(|((psi, g), w)| psi * g * w)
                .sum()
        }),
    ))
}

/// One quantized power report.
///
/// `y` is the centroid and `eps` the half-width of the quantization interval
/// that contains the (possibly noisy) measured power. Virtual records are
/// appended by the fusion center to promote nonnegative estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub sensor_index: usize,
    pub location: Location,
    pub phi: FilterWeight,
    pub q_index: Option<usize>,
    pub y: f64,
    pub eps: f64,
    pub raw: Option<f64>,
    pub is_virtual: bool,
}

impl MeasurementRecord {
    pub fn channels(&self) -> usize {
        self.phi.len()
    }
}
