//! Uniform and constant-probability quantizers and the interval data they
//! produce.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Location, MeasurementRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerKind {
    Uniform,
    Cpq,
    /// Boundaries given explicitly rather than calibrated.
    Explicit,
}

/// Quantizer with cells `[τ_i, τ_{i+1})`, `i = 0..R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    boundaries: Vec<f64>,
    kind: QuantizerKind,
}

const MIN_CALIBRATION_SAMPLES: usize = 100;

impl QuantizerSpec {
    pub fn new(boundaries: Vec<f64>, kind: QuantizerKind) -> Result<Self> {
        if boundaries.len() < 3 {
            return Err(Error::invalid("boundaries", "need at least two cells (three boundaries)"));
        }
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("boundaries", "must be finite"));
        }
        if let Some(w) = boundaries.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "boundaries",
                format!("must be strictly increasing ({} then {})", w[0], w[1]),
            ));
        }
        if kind == QuantizerKind::Uniform {
            let step = boundaries[1] - boundaries[0];
            let tol = 1e-12 * boundaries.last().unwrap().abs().max(1.0);
            if boundaries.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > tol) {
                return Err(Error::invalid("boundaries", "uniform quantizer needs equal steps"));
            }
        }
        Ok(QuantizerSpec { boundaries, kind })
    }

    /// `R` equal cells of width `step` starting at `origin`.
    pub fn uniform(origin: f64, step: f64, cells: usize) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::invalid("step", "must be positive"));
        }
        let boundaries = (0..=cells).map(|i| origin + step * i as f64).collect();
        QuantizerSpec::new(boundaries, QuantizerKind::Uniform)
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn kind(&self) -> QuantizerKind {
        self.kind
    }

    /// Number of cells `R`.
    pub fn cells(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// `b = ⌈log₂ R⌉`.
    pub fn bits(&self) -> u32 {
        (self.cells() as f64).log2().ceil() as u32
    }

    pub fn lower(&self) -> f64 {
        self.boundaries[0]
    }

    pub fn upper(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }

    /// Cell index and whether the value fell outside `[τ_0, τ_R)`.
    pub fn quantize_with_clip(&self, v: f64) -> (usize, bool) {
        if v < self.lower() {
            return (0, true);
        }
        if v >= self.upper() {
            return (self.cells() - 1, true);
        }
        (self.boundaries.partition_point(|&b| b <= v) - 1, false)
    }

    /// Index `i` with `τ_i ≤ v < τ_{i+1}`; out-of-range values clip to the
    /// first or last cell.
    pub fn quantize(&self, v: f64) -> usize {
        self.quantize_with_clip(v).0
    }

    /// Centroid and half-width of cell `index`.
    pub fn interval_of(&self, index: usize) -> Result<(f64, f64)> {
        if index >= self.cells() {
            return Err(Error::invalid(
                "index",
                format!("cell {index} out of range for {} cells", self.cells()),
            ));
        }
        let (lo, hi) = (self.boundaries[index], self.boundaries[index + 1]);
        Ok(((hi + lo) / 2.0, (hi - lo) / 2.0))
    }
}

fn sorted_samples(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::invalid(
            "samples",
            format!("need at least {MIN_CALIBRATION_SAMPLES} calibration samples, got {}", samples.len()),
        ));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples", "calibration samples must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn check_bits(bits: u32) -> Result<usize> {
    if bits == 0 || bits > 24 {
        return Err(Error::invalid("bits", format!("must be in 1..=24, got {bits}")));
    }
    Ok(1usize << bits)
}

/// Uniform quantizer on `[0, τ_R]` with `τ_R` the empirical
/// `(1 − clip_prob)` quantile of the samples.
pub fn calibrate_uniform(samples: &[f64], bits: u32, clip_prob: f64) -> Result<QuantizerSpec> {
    let cells = check_bits(bits)?;
    if !(clip_prob > 0.0 && clip_prob < 1.0) {
        return Err(Error::invalid("clip_prob", format!("must be in (0, 1), got {clip_prob}")));
    }
    let sorted = sorted_samples(samples)?;
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::invalid("samples", "degenerate calibration sample range"));
    }
    let top = quantile(&sorted, 1.0 - clip_prob);
    if !(top > 0.0) {
        return Err(Error::invalid("samples", "upper quantile is not positive"));
    }
    QuantizerSpec::uniform(0.0, top / cells as f64, cells)
}

/// Constant-probability quantizer: interior boundaries at the empirical
/// quantiles `i/R`, `τ_0 = 0` and `τ_R` at the sample maximum.
pub fn calibrate_cpq(samples: &[f64], bits: u32) -> Result<QuantizerSpec> {
    let cells = check_bits(bits)?;
    let sorted = sorted_samples(samples)?;
    let n = sorted.len();
    let mut boundaries = Vec::with_capacity(cells + 1);
    boundaries.push(0.0_f64.min(sorted[0]));
    for i in 1..cells {
        // Boundary at the order statistic that leaves i·n/R samples below it,
        // so per-cell training counts differ from n/R by less than one.
        let k = ((i * n) as f64 / cells as f64).ceil() as usize;
        boundaries.push(sorted[k.min(n - 1)]);
    }
    boundaries.push(sorted[n - 1]);
    let mut fixed = Vec::with_capacity(boundaries.len());
    for b in boundaries {
        match fixed.last() {
            Some(&prev) if !(b > prev) => {
                return Err(Error::invalid(
                    "samples",
                    format!("too many tied calibration samples near {b} for {cells} cells"),
                ))
            }
            _ => fixed.push(b),
        }
    }
    QuantizerSpec::new(fixed, QuantizerKind::Cpq)
}

/// One record per location and channel with `φ = e_m` and the full
/// quantizer range as the interval.
pub fn virtual_records(locations: &[(usize, Location)], spec: &QuantizerSpec, channels: usize) -> Vec<MeasurementRecord> {
    let y = (spec.lower() + spec.upper()) / 2.0;
    let eps = (spec.upper() - spec.lower()) / 2.0;
    locations
        .iter()
        .flat_map(|(sensor, x)| {
            (0..channels).map(move |m| {
                let mut phi = DVector::zeros(channels);
                phi[m] = 1.0;
                MeasurementRecord {
                    sensor_index: *sensor,
                    location: x.clone(),
                    phi,
                    q_index: None,
                    y,
                    eps,
                    raw: None,
                    is_virtual: true,
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit_uniform() -> QuantizerSpec {
        QuantizerSpec::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], QuantizerKind::Uniform).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let q = unit_uniform();
        assert_eq!(q.quantize(1.3), 1);
        assert_eq!(q.quantize(2.0), 2);
        assert_eq!(q.quantize_with_clip(99.0), (3, true));
        assert_eq!(q.quantize_with_clip(-0.5), (0, true));
        assert_eq!(q.quantize_with_clip(0.0), (0, false));
        assert_eq!(q.bits(), 2);
    }

    #[test]
    fn interval_examples() {
        let q = unit_uniform();
        assert_eq!(q.interval_of(1).unwrap(), (1.5, 0.5));
        let q = QuantizerSpec::new(vec![0.0, 1.0, 4.0], QuantizerKind::Explicit).unwrap();
        assert_eq!(q.interval_of(1).unwrap(), (2.5, 1.5));
        let q = QuantizerSpec::new(vec![0.0, 2.0, 4.0], QuantizerKind::Explicit).unwrap();
        assert_eq!(q.interval_of(0).unwrap(), (1.0, 1.0));
        assert!(q.interval_of(2).is_err());
    }

    #[test]
    fn invalid_boundaries() {
        assert!(QuantizerSpec::new(vec![0.0, 1.0], QuantizerKind::Explicit).is_err());
        assert!(QuantizerSpec::new(vec![0.0, 1.0, 1.0], QuantizerKind::Explicit).is_err());
        assert!(QuantizerSpec::new(vec![0.0, 1.0, 3.0], QuantizerKind::Uniform).is_err());
    }

    #[test]
    fn uniform_centroid_matches_odd_multiple_of_eps() {
        let eps = 0.37;
        let q = QuantizerSpec::uniform(0.0, 2.0 * eps, 8).unwrap();
        for i in 0..8 {
            let (y, e) = q.interval_of(i).unwrap();
            assert_abs_diff_eq!(y, (2 * i + 1) as f64 * eps, epsilon = 1e-12);
            assert_abs_diff_eq!(e, eps, epsilon = 1e-12);
        }
    }

    #[test]
    fn calibrate_uniform_on_uniform_samples() {
        let samples: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let q = calibrate_uniform(&samples, 1, 1e-9).unwrap();
        let b = q.boundaries();
        assert_abs_diff_eq!(b[0], 0.0);
        assert_abs_diff_eq!(b[1], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(b[2], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn calibrate_uniform_clip_rate_on_fresh_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect()
        };
        let train = draw(100_000);
        let q = calibrate_uniform(&train, 4, 1e-3).unwrap();
        let fresh = draw(100_000);
        let clipped = fresh.iter().filter(|v| q.quantize_with_clip(**v).1).count();
        let rate = clipped as f64 / fresh.len() as f64;
        assert!((rate - 1e-3).abs() <= 5e-4, "clip rate {rate}");
    }

    #[test]
    fn calibrate_rejects_bad_input() {
        assert!(calibrate_uniform(&[1.0; 500], 2, 1e-3).is_err());
        assert!(calibrate_uniform(&[1.0; 10], 2, 1e-3).is_err());
        assert!(calibrate_cpq(&[1.0; 10], 2).is_err());
        let s: Vec<f64> = (0..200).map(f64::from).collect();
        assert!(calibrate_uniform(&s, 2, 0.0).is_err());
    }

    #[test]
    fn cpq_quartiles() {
        let samples: Vec<f64> = (0..100).map(f64::from).collect();
        let q = calibrate_cpq(&samples, 2).unwrap();
        assert_eq!(q.boundaries(), &[0.0, 25.0, 50.0, 75.0, 99.0]);
    }

    #[test]
    fn cpq_one_bit_is_min_median_max() {
        let samples: Vec<f64> = (0..101).map(|i| 1.0 + i as f64).collect();
        let q = calibrate_cpq(&samples, 1).unwrap();
        let b = q.boundaries();
        assert_eq!(b.len(), 3);
        assert!(b[0] <= 1.0);
        assert_abs_diff_eq!(b[1], 51.0, epsilon = 1.0);
        assert_eq!(b[2], 101.0);
    }

    #[test]
    fn cpq_heldout_occupancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>().powi(3)).collect() };
        let train = draw(20_000);
        let bits = 3;
        let q = calibrate_cpq(&train, bits).unwrap();
        let r = q.cells() as f64;
        let held = draw(20_000);
        let mut counts = vec![0usize; q.cells()];
        for v in &held {
            counts[q.quantize(*v)] += 1;
        }
        for c in counts {
            let p = c as f64 / held.len() as f64;
            assert!(p >= 0.8 / r && p <= 1.2 / r, "occupancy {p}");
        }
    }

    #[test]
    fn virtual_record_examples() {
        let q = unit_uniform();
        let recs = virtual_records(&[(0, Location(vec![0.5]))], &q, 2);
        assert_eq!(recs.len(), 2);
        for (m, r) in recs.iter().enumerate() {
            assert_eq!((r.y, r.eps), (2.0, 2.0));
            assert_eq!(r.phi[m], 1.0);
            assert_eq!(r.phi.sum(), 1.0);
            assert!(r.is_virtual);
        }
        assert!(virtual_records(&[], &q, 3).is_empty());
        let locs: Vec<_> = (0..7).map(|i| (i, Location(vec![i as f64]))).collect();
        assert_eq!(virtual_records(&locs, &q, 5).len(), 35);
    }
}
