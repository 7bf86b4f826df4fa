//! Synthetic scenarios: transmitters with pathloss and correlated log-normal
//! shadowing, randomly deployed sensors, random filter weights, measurement
//! noise and quantized reports.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Location, MeasurementRecord, PowerVector};
use crate::quantize::{calibrate_cpq, calibrate_uniform, virtual_records, QuantizerSpec};

/// Independent randomness sources. Each gets its own ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Source {
    Field = 1,
    Sensors = 2,
    Phi = 3,
    Noise = 4,
    Calibration = 5,
    Evaluation = 6,
    Schedule = 7,
}

/// Generator for `source` in Monte Carlo run `run` under `seed`.
pub fn stream(seed: u64, run: u64, source: Source) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((run << 8) | source as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transmitter {
    /// Linear transmit power `A_m`.
    pub power: f64,
    pub location: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shadowing {
    /// Variance `σ_s²` in dB².
    pub variance_db: f64,
    /// Correlation base `ρ`; covariance is `σ_s² ρ^‖x − x'‖`.
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerChoice {
    Uniform,
    Cpq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerDirective {
    pub bits: u32,
    pub kind: QuantizerChoice,
    /// Probability mass above the uniform quantizer range.
    #[serde(default = "default_clip_prob")]
    pub clip_prob: f64,
    /// Monte Carlo samples used for calibration.
    #[serde(default = "default_calibration_samples")]
    pub calibration_samples: usize,
}

fn default_clip_prob() -> f64 {
    0.01
}

fn default_calibration_samples() -> usize {
    20_000
}

/// Additive measurement noise `η ~ N(0, σ_η²)`, given either directly or as
/// the target fraction of reports that change cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasurementNoise {
    Variance(f64),
    ErrorRate(f64),
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        MeasurementNoise::Variance(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dim: usize,
    pub region_lo: Vec<f64>,
    pub region_hi: Vec<f64>,
    pub transmitters: Vec<Transmitter>,
    /// Constant noise-floor gain `l_M`.
    pub noise_power: f64,
    pub gamma: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub shadowing: Shadowing,
    pub sensors: usize,
    pub measurements_per_sensor: usize,
    #[serde(default)]
    pub noise: MeasurementNoise,
    pub quantizer: QuantizerDirective,
    #[serde(default)]
    pub virtual_measurements: bool,
    /// Uniform evaluation points for NMSE.
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
}

fn default_delta() -> f64 {
    1e-2
}

fn default_eval_points() -> usize {
    1000
}

impl ScenarioConfig {
    /// Number of channels `M` (transmitters plus the noise floor).
    pub fn channels(&self) -> usize {
        self.transmitters.len() + 1
    }

    pub fn transmitter_locations(&self) -> Vec<Location> {
        self.transmitters.iter().map(|t| Location(t.location.clone())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, msg: String| Err(Error::config(format!("scenario.{key}"), msg));
        if self.dim == 0 {
            return cfg("dim", "must be at least 1".into());
        }
        if self.region_lo.len() != self.dim || self.region_hi.len() != self.dim {
            return cfg("region_lo", format!("region bounds need {} coordinates", self.dim));
        }
        if self.region_lo.iter().zip(&self.region_hi).any(|(l, h)| !(h > l)) {
            return cfg("region_hi", "each upper bound must exceed the lower bound".into());
        }
        if self.transmitters.is_empty() {
            return cfg("transmitters", "need at least one transmitter".into());
        }
        for (i, t) in self.transmitters.iter().enumerate() {
            if !(t.power > 0.0 && t.power.is_finite()) {
                return cfg(&format!("transmitters[{i}].power"), "must be positive".into());
            }
            if t.location.len() != self.dim || t.location.iter().any(|v| !v.is_finite()) {
                return cfg(&format!("transmitters[{i}].location"), format!("need {} finite coordinates", self.dim));
            }
        }
        if !(self.noise_power >= 0.0 && self.noise_power.is_finite()) {
            return cfg("noise_power", "must be nonnegative".into());
        }
        if !self.gamma.is_finite() {
            return cfg("gamma", "must be finite".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return cfg("delta", "must be positive".into());
        }
        if !(self.shadowing.variance_db >= 0.0 && self.shadowing.variance_db.is_finite()) {
            return cfg("shadowing.variance_db", "must be nonnegative".into());
        }
        if !(self.shadowing.rho > 0.0 && self.shadowing.rho < 1.0) {
            return cfg("shadowing.rho", "must lie in (0, 1)".into());
        }
        if self.sensors == 0 {
            return cfg("sensors", "must be at least 1".into());
        }
        if self.measurements_per_sensor == 0 {
            return cfg("measurements_per_sensor", "must be at least 1".into());
        }
        match self.noise {
            MeasurementNoise::Variance(v) if !(v >= 0.0 && v.is_finite()) => {
                return cfg("noise.variance", "must be nonnegative".into())
            }
            MeasurementNoise::ErrorRate(r) if !(r > 0.0 && r < 1.0) => {
                return cfg("noise.error-rate", "must lie in (0, 1)".into())
            }
            _ => {}
        }
        let q = &self.quantizer;
        if q.bits == 0 || q.bits > 24 {
            return cfg("quantizer.bits", "must be in 1..=24".into());
        }
        if !(q.clip_prob > 0.0 && q.clip_prob < 1.0) {
            return cfg("quantizer.clip_prob", "must lie in (0, 1)".into());
        }
        if q.calibration_samples < 100 {
            return cfg("quantizer.calibration_samples", "need at least 100".into());
        }
        if self.eval_points == 0 {
            return cfg("eval_points", "must be at least 1".into());
        }
        Ok(())
    }

    /// Uniform draw from the region.
    pub fn sample_location<R: Rng + ?Sized>(&self, rng: &mut R) -> Location {
        Location(
            self.region_lo
                .iter()
                .zip(&self.region_hi)
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        )
    }

    /// `A_m (δ + ‖x − χ_m‖)^{−γ}` without shadowing.
    pub fn pathloss(&self, m: usize, x: &Location) -> f64 {
        let t = &self.transmitters[m];
        let r = x.dist(&Location(t.location.clone()));
        t.power * (self.delta + r).powf(-self.gamma)
    }

    /// One-dimensional scenario with evenly spread transmitters, no
    /// shadowing and noiseless reports. Uses `δ = 0.5` so that no single
    /// transmitter peak dominates the NMSE.
    pub fn line(transmitters: usize, sensors: usize, per_sensor: usize, bits: u32, kind: QuantizerChoice) -> Self {
        let txs = (0..transmitters)
            .map(|i| Transmitter {
                power: 0.9 - 0.1 * i as f64 % 0.6,
                location: vec![(i as f64 + 0.5) / transmitters as f64],
            })
            .collect();
        ScenarioConfig {
            dim: 1,
            region_lo: vec![0.0],
            region_hi: vec![1.0],
            transmitters: txs,
            noise_power: 0.75,
            gamma: 3.0,
            delta: 0.5,
            shadowing: Shadowing { variance_db: 0.0, rho: 0.8 },
            sensors,
            measurements_per_sensor: per_sensor,
            noise: MeasurementNoise::Variance(0.0),
            quantizer: QuantizerDirective {
                bits,
                kind,
                clip_prob: default_clip_prob(),
                calibration_samples: default_calibration_samples(),
            },
            virtual_measurements: false,
            eval_points: default_eval_points(),
        }
    }

    /// Two-dimensional three-transmitter layout on the unit square with
    /// correlated shadowing.
    pub fn square() -> Self {
        let tx = |power, x: f64, y: f64| Transmitter { power, location: vec![x, y] };
        ScenarioConfig {
            dim: 2,
            region_lo: vec![0.0, 0.0],
            region_hi: vec![1.0, 1.0],
            transmitters: vec![tx(0.9, 0.2, 0.8), tx(0.8, 0.4, 0.5), tx(0.7, 0.8, 0.9)],
            noise_power: 0.75,
            gamma: 3.0,
            delta: 1e-2,
            shadowing: Shadowing { variance_db: 2.0, rho: 0.8 },
            sensors: 40,
            measurements_per_sensor: 3,
            noise: MeasurementNoise::ErrorRate(0.15),
            quantizer: QuantizerDirective {
                bits: 3,
                kind: QuantizerChoice::Uniform,
                clip_prob: default_clip_prob(),
                calibration_samples: default_calibration_samples(),
            },
            virtual_measurements: true,
            eval_points: 400,
        }
    }
}

/// Jointly Gaussian shadowing (dB) at `points`, one vector per transmitter,
/// with covariance `σ_s² ρ^‖x_i − x_j‖`.
///
/// One-dimensional point sets are sampled exactly in `O(n)` through the
/// Markov property of the exponential covariance; higher dimensions use a
/// Cholesky factor of the covariance plus jitter.
pub fn sample_shadowing<R: Rng + ?Sized>(
    points: &[Location],
    variance_db: f64,
    rho: f64,
    transmitters: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if !(variance_db >= 0.0) {
        return Err(Error::invalid("variance_db", "must be nonnegative"));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid("rho", "must lie in (0, 1)"));
    }
    let n = points.len();
    if variance_db == 0.0 || n == 0 {
        return Ok(vec![DVector::zeros(n); transmitters]);
    }
    let sd = variance_db.sqrt();
    if points.iter().all(|p| p.dim() == 1) {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| points[a].0[0].total_cmp(&points[b].0[0]));
        return Ok((0..transmitters)
            .map(|_| {
                let mut out = DVector::zeros(n);
                let mut prev: Option<(f64, f64)> = None;
                for &i in &order {
                    let x = points[i].0[0];
                    let z: f64 = rng.sample(StandardNormal);
                    let v = match prev {
                        None => sd * z,
                        Some((px, pv)) => {
                            let a = rho.powf(x - px);
                            a * pv + sd * (1.0 - a * a).max(0.0).sqrt() * z
                        }
                    };
                    out[i] = v;
                    prev = Some((x, v));
                }
                out
            })
            .collect());
    }
    let cov = DMatrix::from_fn(n, n, |i, j| variance_db * rho.powf(points[i].dist(&points[j])));
    let mut jitter = 1e-12 * variance_db;
    let chol = loop {
        let mut c = cov.clone();
        for i in 0..n {
            c[(i, i)] += jitter;
        }
        if let Some(ch) = c.cholesky() {
            break ch;
        }
        jitter *= 10.0;
        if jitter > 1e-4 * variance_db {
            return Err(Error::Singular("shadowing covariance".into()));
        }
    };
    let l = chol.l();
    Ok((0..transmitters)
        .map(|_| {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            &l * z
        })
        .collect())
}

/// Channel-gain field with shadowing realized on a fixed point set.
#[derive(Debug, Clone)]
pub struct GroundTruthField {
    config: ScenarioConfig,
    points: Vec<Location>,
    /// Per transmitter, shadowing in dB at each point.
    shadow_db: Vec<DVector<f64>>,
}

impl GroundTruthField {
    pub fn new(config: ScenarioConfig, points: Vec<Location>, shadow_db: Vec<DVector<f64>>) -> Result<Self> {
        if shadow_db.len() != config.transmitters.len() || shadow_db.iter().any(|s| s.len() != points.len()) {
            return Err(Error::DimensionMismatch {
                context: "shadowing realization",
                expected: points.len(),
                got: shadow_db.first().map_or(0, |s| s.len()),
            });
        }
        Ok(GroundTruthField { config, points, shadow_db })
    }

    pub fn points(&self) -> &[Location] {
        &self.points
    }

    pub fn channels(&self) -> usize {
        self.config.channels()
    }

    /// `l(x_i)` at the `i`-th realization point.
    pub fn gains_at(&self, i: usize) -> PowerVector {
        let m = self.channels();
        let x = &self.points[i];
        DVector::from_fn(m, |c, _| {
            if c + 1 == m {
                self.config.noise_power
            } else {
                self.config.pathloss(c, x) * 10f64.powf(self.shadow_db[c][i] / 10.0)
            }
        })
    }

    /// `l(x)`; shadowing is taken from the nearest realization point.
    pub fn eval(&self, x: &Location) -> PowerVector {
        let nearest = self
            .points
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.dist2(x).total_cmp(&b.1.dist2(x)))
            .map(|(i, _)| i);
        let m = self.channels();
        DVector::from_fn(m, |c, _| {
            if c + 1 == m {
                self.config.noise_power
            } else {
                let s = nearest.map_or(0.0, |i| self.shadow_db[c][i]);
                self.config.pathloss(c, x) * 10f64.powf(s / 10.0)
            }
        })
    }
}

/// Field from a shadowing draw on `points`.
pub fn gain_field(config: &ScenarioConfig, points: Vec<Location>, shadow_db: Vec<DVector<f64>>) -> Result<GroundTruthField> {
    GroundTruthField::new(config.clone(), points, shadow_db)
}

/// Draws of `(π, z)` from the scenario's marginal report distribution: `x`
/// uniform, independent shadowing per draw, uniform `φ`, and a standard
/// normal `z` that scales into measurement noise.
fn marginal_draws(config: &ScenarioConfig, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = stream(seed, 0, Source::Calibration);
    let m = config.channels();
    let sd = config.shadowing.variance_db.sqrt();
    (0..config.quantizer.calibration_samples)
        .map(|_| {
            let x = config.sample_location(&mut rng);
            let mut pi = 0.0;
            for c in 0..m {
                let phi: f64 = rng.random();
                let gain = if c + 1 == m {
                    config.noise_power
                } else {
                    let s: f64 = rng.sample::<f64, _>(StandardNormal) * sd;
                    config.pathloss(c, &x) * 10f64.powf(s / 10.0)
                };
                pi += phi * gain;
            }
            (pi, rng.sample::<f64, _>(StandardNormal))
        })
        .collect()
}

/// Monte Carlo fraction of reports whose cell changes under noise `σ_η`.
fn error_rate(quantizer: &QuantizerSpec, draws: &[(f64, f64)], sigma: f64) -> f64 {
    let changed = draws
        .iter()
        .filter(|(pi, z)| quantizer.quantize(*pi) != quantizer.quantize((pi + sigma * z).abs()))
        .count();
    changed as f64 / draws.len() as f64
}

/// Calibrated quantizer and noise standard deviation for a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub quantizer: QuantizerSpec,
    pub noise_std: f64,
    /// Monte Carlo cell-change rate at `noise_std`.
    pub error_rate: f64,
}

/// Calibrates the quantizer from `|φᵀl + η|` and, for an error-rate noise
/// directive, finds `σ_η` by bisection on the Monte Carlo cell-change rate.
/// Depends on `seed` only through the calibration stream.
pub fn calibrate(config: &ScenarioConfig, seed: u64) -> Result<Calibration> {
    config.validate()?;
    let draws = marginal_draws(config, seed);
    let fit = |sigma: f64| -> Result<QuantizerSpec> {
        let samples: Vec<f64> = draws.iter().map(|(pi, z)| (pi + sigma * z).abs()).collect();
        match config.quantizer.kind {
            QuantizerChoice::Uniform => calibrate_uniform(&samples, config.quantizer.bits, config.quantizer.clip_prob),
            QuantizerChoice::Cpq => calibrate_cpq(&samples, config.quantizer.bits),
        }
    };
    match config.noise {
        MeasurementNoise::Variance(v) => {
            let sigma = v.sqrt();
            let quantizer = fit(sigma)?;
            let rate = error_rate(&quantizer, &draws, sigma);
            Ok(Calibration { quantizer, noise_std: sigma, error_rate: rate })
        }
        MeasurementNoise::ErrorRate(target) => {
            // Quantizer calibrated on noiseless powers; the noise level is
            // then tuned against it.
            let quantizer = fit(0.0)?;
            let sigma = bisect_noise(&quantizer, &draws, target)?;
            let rate = error_rate(&quantizer, &draws, sigma);
            Ok(Calibration { quantizer, noise_std: sigma, error_rate: rate })
        }
    }
}

fn bisect_noise(quantizer: &QuantizerSpec, draws: &[(f64, f64)], target: f64) -> Result<f64> {
    let scale = quantizer.upper() - quantizer.lower();
    let mut hi = scale / quantizer.cells() as f64;
    let mut guard = 0;
    while error_rate(quantizer, draws, hi) < target {
        hi *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(Error::invalid("noise.error-rate", "target rate is not reachable"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if error_rate(quantizer, draws, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Summary statistics of one synthesized data set.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynthesisStats {
    /// Fraction of reports outside the quantizer range.
    pub clip_rate: f64,
    /// Fraction of reports whose cell differs from the noiseless report.
    pub error_rate: f64,
}

/// One Monte Carlo realization: sensors, evaluation points, field, reports.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub sensors: Vec<Location>,
    pub eval_points: Vec<Location>,
    pub field: GroundTruthField,
    pub records: Vec<MeasurementRecord>,
    pub quantizer: QuantizerSpec,
    pub stats: SynthesisStats,
}

impl Scenario {
    /// Generates run `run` of `config` under master `seed`, reusing a
    /// precomputed calibration.
    pub fn generate(config: &ScenarioConfig, calibration: &Calibration, seed: u64, run: u64) -> Result<Scenario> {
        config.validate()?;
        let mut rng_sensors = stream(seed, run, Source::Sensors);
        let sensors: Vec<Location> = (0..config.sensors).map(|_| config.sample_location(&mut rng_sensors)).collect();
        let mut rng_eval = stream(seed, run, Source::Evaluation);
        let eval_points: Vec<Location> =
            (0..config.eval_points).map(|_| config.sample_location(&mut rng_eval)).collect();
        let points: Vec<Location> = sensors.iter().chain(&eval_points).cloned().collect();
        let mut rng_field = stream(seed, run, Source::Field);
        let shadow = sample_shadowing(
            &points,
            config.shadowing.variance_db,
            config.shadowing.rho,
            config.transmitters.len(),
            &mut rng_field,
        )?;
        let field = gain_field(config, points, shadow)?;
        let (records, stats) = synthesize_measurements(config, &field, calibration, seed, run)?;
        Ok(Scenario { sensors, eval_points, field, records, quantizer: calibration.quantizer.clone(), stats })
    }
}

/// Quantized reports `Q(|φᵀl(x_n) + η|)` from the first `config.sensors`
/// realization points of `field`, plus virtual records when configured.
pub fn synthesize_measurements(
    config: &ScenarioConfig,
    field: &GroundTruthField,
    calibration: &Calibration,
    seed: u64,
    run: u64,
) -> Result<(Vec<MeasurementRecord>, SynthesisStats)> {
    if field.points().len() < config.sensors {
        return Err(Error::DimensionMismatch {
            context: "field points for sensors",
            expected: config.sensors,
            got: field.points().len(),
        });
    }
    let m = config.channels();
    let q = &calibration.quantizer;
    let mut rng_phi = stream(seed, run, Source::Phi);
    let mut rng_noise = stream(seed, run, Source::Noise);
    let mut records = Vec::with_capacity(config.sensors * config.measurements_per_sensor);
    let mut clipped = 0usize;
    let mut changed = 0usize;
    for n in 0..config.sensors {
        let l = field.gains_at(n);
        let x = &field.points()[n];
        for _ in 0..config.measurements_per_sensor {
            let phi = DVector::from_fn(m, |_, _| rng_phi.random::<f64>());
            let clean = phi.dot(&l);
            let eta: f64 = rng_noise.sample::<f64, _>(StandardNormal) * calibration.noise_std;
            let raw = (clean + eta).abs();
            let (idx, clip) = q.quantize_with_clip(raw);
            clipped += clip as usize;
            changed += (idx != q.quantize(clean)) as usize;
            let (y, eps) = q.interval_of(idx)?;
            records.push(MeasurementRecord {
                sensor_index: n,
                location: x.clone(),
                phi,
                q_index: Some(idx),
                y,
                eps,
                raw: Some(raw),
                is_virtual: false,
            });
        }
    }
    let total = records.len() as f64;
    if config.virtual_measurements {
        let locs: Vec<(usize, Location)> = (0..config.sensors).map(|n| (n, field.points()[n].clone())).collect();
        records.extend(virtual_records(&locs, q, m));
    }
    Ok((records, SynthesisStats { clip_rate: clipped as f64 / total, error_rate: changed as f64 / total }))
}
