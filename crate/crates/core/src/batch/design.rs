use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{diagonal_blocks, KernelSpec};
use crate::model::{Location, MeasurementRecord};

/// Measurements grouped by distinct sensor location.
///
/// Column `j` of `phi` is the filter weight of measurement `j`, taken at
/// anchor `anchor_of[j]`. Columns are ordered anchor by anchor, so the
/// selection-expanded matrix `Φ̄₀` has column `j` equal to
/// `e_{anchor_of[j]} ⊗ φ_j`.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub anchors: Vec<Location>,
    pub anchor_of: Vec<usize>,
    pub phi: DMatrix<f64>,
    pub y: DVector<f64>,
    pub eps: DVector<f64>,
    pub raw: Option<DVector<f64>>,
    /// Loss multiplicity of each measurement; all ones unless identical
    /// records were merged.
    pub weights: DVector<f64>,
    pub channels: usize,
}

impl DesignMatrices {
    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    pub fn measurement_count(&self) -> usize {
        self.anchor_of.len()
    }

    /// Total loss weight; equals `NP` for unit weights.
    pub fn total_weight(&self) -> f64 {
        self.weights.sum()
    }

    pub fn with_weights(mut self, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != self.measurement_count() {
            return Err(Error::DimensionMismatch {
                context: "measurement weights",
                expected: self.measurement_count(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("weights", "must be positive"));
        }
        self.weights = weights;
        Ok(self)
    }

    /// Dense `MN × NP` matrix `Φ̄₀ = (I_N ⊗ 1_Pᵀ) ⊙ Φ̄`.
    pub fn phi0(&self) -> DMatrix<f64> {
        let m = self.channels;
        let mut out = DMatrix::zeros(self.anchor_count() * m, self.measurement_count());
        for (j, &a) in self.anchor_of.iter().enumerate() {
            out.view_mut((a * m, j), (m, 1)).copy_from(&self.phi.column(j));
        }
        out
    }

    /// `Φ̄₀ v` (length `MN`).
    pub fn phi0_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = self.channels;
        let mut out = DVector::zeros(self.anchor_count() * m);
        for (j, &a) in self.anchor_of.iter().enumerate() {
            for c in 0..m {
                out[a * m + c] += self.phi[(c, j)] * v[j];
            }
        }
        out
    }

    /// `Φ̄₀ᵀ u` (length `NP`).
    pub fn phi0_tr_mul(&self, u: &DVector<f64>) -> DVector<f64> {
        let m = self.channels;
        DVector::from_fn(self.measurement_count(), |j, _| {
            let a = self.anchor_of[j];
            (0..m).map(|c| self.phi[(c, j)] * u[a * m + c]).sum()
        })
    }

    /// `K₀ = Φ̄₀ᵀ K Φ̄₀` without forming any `MN`-sized matrix.
    pub fn k0(&self, kernel: &KernelSpec) -> DMatrix<f64> {
        let blocks = diagonal_blocks(kernel, &self.anchors);
        let np = self.measurement_count();
        let m = self.channels;
        let mut out = DMatrix::zeros(np, np);
        for j in 0..np {
            for k in j..np {
                let d = &blocks[self.anchor_of[j]][self.anchor_of[k]];
                let v: f64 = (0..m).map(|c| self.phi[(c, j)] * d[c] * self.phi[(c, k)]).sum();
                out[(j, k)] = v;
                out[(k, j)] = v;
            }
        }
        out
    }

    /// `Bᵀ Φ̄₀` for a stacked basis matrix `B` (`NM × N_B M`).
    pub fn basis_tr_phi0(&self, basis_matrix: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.channels;
        let cols = basis_matrix.ncols();
        let mut out = DMatrix::zeros(cols, self.measurement_count());
        for (j, &a) in self.anchor_of.iter().enumerate() {
            for r in 0..cols {
                out[(r, j)] = (0..m).map(|c| basis_matrix[(a * m + c, r)] * self.phi[(c, j)]).sum();
            }
        }
        out
    }
}

/// Groups records by exact sensor location and stacks them into the design
/// matrices. Anchors keep the order in which locations first appear.
pub fn assemble_design(records: &[MeasurementRecord]) -> Result<DesignMatrices> {
    let first = records.first().ok_or(Error::EmptyInput("measurement records"))?;
    let channels = first.channels();
    let dim = first.location.dim();
    if channels == 0 {
        return Err(Error::invalid("phi", "filter weights must have at least one channel"));
    }
    let mut anchors: Vec<Location> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.channels() != channels {
            return Err(Error::DimensionMismatch { context: "record channels", expected: channels, got: r.channels() });
        }
        if r.location.dim() != dim {
            return Err(Error::DimensionMismatch { context: "record location", expected: dim, got: r.location.dim() });
        }
        if !(r.eps >= 0.0) || !r.y.is_finite() || !r.location.is_finite() || r.phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("records", format!("record {i} has invalid values")));
        }
        match anchors.iter().position(|a| a.same_point(&r.location)) {
            Some(a) => members[a].push(i),
            None => {
                anchors.push(r.location.clone());
                members.push(vec![i]);
            }
        }
    }
    let order: Vec<(usize, usize)> = members
        .iter()
        .enumerate()
        .flat_map(|(a, idx)| idx.iter().map(move |&i| (a, i)))
        .collect();
    let np = order.len();
    let mut phi = DMatrix::zeros(channels, np);
    for (j, &(_, i)) in order.iter().enumerate() {
        phi.set_column(j, &records[i].phi);
    }
    let all_raw = order.iter().all(|&(_, i)| records[i].raw.is_some());
    Ok(DesignMatrices {
        anchors,
        anchor_of: order.iter().map(|&(a, _)| a).collect(),
        phi,
        y: DVector::from_iterator(np, order.iter().map(|&(_, i)| records[i].y)),
        eps: DVector::from_iterator(np, order.iter().map(|&(_, i)| records[i].eps)),
        raw: all_raw.then(|| DVector::from_iterator(np, order.iter().map(|&(_, i)| records[i].raw.unwrap()))),
        weights: DVector::from_element(np, 1.0),
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{assemble_kernel, KernelSpec};

    fn rec(x: f64, phi: &[f64], y: f64) -> MeasurementRecord {
        MeasurementRecord {
            sensor_index: 0,
            location: Location(vec![x]),
            phi: DVector::from_column_slice(phi),
            q_index: None,
            y,
            eps: 0.5,
            raw: Some(y),
            is_virtual: false,
        }
    }

    #[test]
    fn single_measurement() {
        let d = assemble_design(&[rec(0.0, &[2.0], 1.0)]).unwrap();
        assert_eq!(d.phi0(), DMatrix::from_element(1, 1, 2.0));
    }

    #[test]
    fn two_sensors_block_diagonal() {
        let d = assemble_design(&[rec(0.0, &[2.0], 1.0), rec(1.0, &[3.0], 1.0)]).unwrap();
        assert_eq!(d.phi0(), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn repeated_sensor_stacks_columns() {
        // N = 1, P = 2, M = 2: (I_1 ⊗ 1_2ᵀ) ⊙ [φ₁ φ₂] = [φ₁ φ₂].
        let d = assemble_design(&[rec(0.3, &[1.0, 2.0], 1.0), rec(0.3, &[3.0, 4.0], 1.0)]).unwrap();
        assert_eq!(d.anchor_count(), 1);
        assert_eq!(d.phi0(), DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
    }

    #[test]
    fn columns_grouped_by_anchor() {
        let recs = [rec(0.0, &[1.0], 1.0), rec(1.0, &[2.0], 2.0), rec(0.0, &[3.0], 3.0)];
        let d = assemble_design(&recs).unwrap();
        assert_eq!(d.anchor_of, vec![0, 0, 1]);
        assert_eq!(d.y.as_slice(), &[1.0, 3.0, 2.0]);
    }

    #[test]
    fn errors() {
        assert!(assemble_design(&[]).is_err());
        assert!(assemble_design(&[rec(0.0, &[1.0], 1.0), rec(0.0, &[1.0, 2.0], 1.0)]).is_err());
    }

    #[test]
    fn structured_products_match_dense() {
        let recs = [
            rec(0.0, &[1.0, 0.5], 1.0),
            rec(0.4, &[0.2, 0.7], 2.0),
            rec(0.0, &[0.3, 0.9], 3.0),
            rec(0.9, &[0.6, 0.1], 0.0),
        ];
        let d = assemble_design(&recs).unwrap();
        let kernel = KernelSpec::DiagonalGaussian { widths: vec![0.1, 0.3] };
        let k = assemble_kernel(&kernel, &d.anchors).unwrap().to_dense();
        let p0 = d.phi0();
        assert!((d.k0(&kernel) - p0.transpose() * &k * &p0).amax() < 1e-14);
        let v = DVector::from_column_slice(&[0.3, -1.0, 2.0, 0.5]);
        assert!((d.phi0_mul(&v) - &p0 * &v).amax() < 1e-14);
        let u = DVector::from_fn(6, |i, _| i as f64);
        assert!((d.phi0_tr_mul(&u) - p0.transpose() * &u).amax() < 1e-14);
        let b = DMatrix::from_fn(6, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        assert!((d.basis_tr_phi0(&b) - b.transpose() * &p0).amax() < 1e-12);
    }
}
