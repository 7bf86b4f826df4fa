//! NMSE evaluation, Monte Carlo sweeps and online traces.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{
    assemble_design, fit_ridge, fit_svm_cpd, fit_svm_nonparametric_design, fit_svm_semiparametric, MapEstimate,
    SvmOptions,
};
use crate::error::{Error, Result};
use crate::kernels::{BasisSpec, KernelSpec};
use crate::model::{Location, MeasurementRecord};
use crate::online::{default_truncation, regret_envelope, Loss, OnlineState, RegretLedger};
use crate::simulate::{calibrate, stream, Calibration, GroundTruthField, MeasurementNoise, QuantizerChoice, Scenario, ScenarioConfig, Source};

/// `Σ‖l(x) − l̂(x)‖² / Σ‖l(x)‖²` over `points`.
pub fn nmse(estimate: &MapEstimate, field: &GroundTruthField, points: &[Location]) -> Result<f64> {
    nmse_with(|x| estimate.evaluate(x), field, points)
}

/// NMSE of an arbitrary map `f`.
pub fn nmse_with<F: Fn(&Location) -> DVector<f64>>(f: F, field: &GroundTruthField, points: &[Location]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("evaluation points"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for x in points {
        let truth = field.eval(x);
        num += (&truth - f(x)).norm_squared();
        den += truth.norm_squared();
    }
    if !(den > 0.0) {
        return Err(Error::invalid("field", "zero field energy at the evaluation points"));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Kernel ridge regression on the un-quantized powers.
    Ridge,
    /// ε-insensitive fit with a Gaussian kernel.
    Nonparametric,
    /// Gaussian kernel plus the transmitter pathloss basis.
    Semiparametric,
    /// Thin-plate kernel with the affine basis.
    Tps,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ridge => "ridge",
            EstimatorKind::Nonparametric => "nonparametric",
            EstimatorKind::Semiparametric => "semiparametric",
            EstimatorKind::Tps => "tps",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub lambda: f64,
    /// Gaussian kernel width (`exp(−‖x − x'‖²/width)`).
    #[serde(default = "default_width")]
    pub width: f64,
    /// Thin-plate order `s`.
    #[serde(default = "default_tps_order")]
    pub tps_order: u32,
}

fn default_width() -> f64 {
    0.05
}

fn default_tps_order() -> u32 {
    2
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind, lambda: f64) -> Self {
        EstimatorConfig { kind, lambda, width: default_width(), tps_order: default_tps_order() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("estimator.lambda", "must be positive"));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::config("estimator.width", "must be positive"));
        }
        if self.tps_order == 0 {
            return Err(Error::config("estimator.tps_order", "must be at least 1"));
        }
        Ok(())
    }

    pub fn kernel(&self, scenario: &ScenarioConfig) -> KernelSpec {
        let m = scenario.channels();
        match self.kind {
            EstimatorKind::Tps => KernelSpec::tps(self.tps_order, scenario.dim, m),
            _ => KernelSpec::gaussian(self.width, m),
        }
    }

    pub fn basis(&self, scenario: &ScenarioConfig) -> BasisSpec {
        match self.kind {
            EstimatorKind::Ridge | EstimatorKind::Nonparametric => BasisSpec::None,
            EstimatorKind::Semiparametric => BasisSpec::TransmitterPathloss {
                anchors: scenario.transmitter_locations(),
                exponent: scenario.gamma,
                offset: scenario.delta,
            },
            EstimatorKind::Tps => BasisSpec::TpsPolynomial { dim: scenario.dim },
        }
    }

    /// Fits the configured estimator to `records`.
    pub fn fit(&self, scenario: &ScenarioConfig, records: &[MeasurementRecord]) -> Result<MapEstimate> {
        self.validate()?;
        let kernel = self.kernel(scenario);
        match self.kind {
            EstimatorKind::Ridge => {
                let real: Vec<MeasurementRecord> = records.iter().filter(|r| !r.is_virtual).cloned().collect();
                fit_ridge(&real, &kernel, self.lambda)
            }
            EstimatorKind::Nonparametric => {
                let design = assemble_design(records)?;
                fit_svm_nonparametric_design(&design, &kernel, self.lambda, SvmOptions::default()).map(|r| r.0)
            }
            EstimatorKind::Semiparametric => {
                fit_svm_semiparametric(records, &kernel, &self.basis(scenario), self.lambda).map(|r| r.0)
            }
            EstimatorKind::Tps => fit_svm_cpd(records, &kernel, &self.basis(scenario), self.lambda).map(|r| r.0),
        }
    }
}

/// Factor grid of a Monte Carlo sweep. Empty factor lists fall back to the
/// value in `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub sensors: Vec<usize>,
    #[serde(default)]
    pub bits: Vec<u32>,
    #[serde(default)]
    pub measurements_per_sensor: Vec<usize>,
    #[serde(default)]
    pub quantizers: Vec<QuantizerChoice>,
    #[serde(default)]
    pub virtual_measurements: Vec<bool>,
    #[serde(default)]
    pub noise: Vec<MeasurementNoise>,
    pub runs: usize,
    pub seed: u64,
}

/// Factor values of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub sensors: usize,
    pub bits: u32,
    pub measurements_per_sensor: usize,
    pub quantizer: QuantizerChoice,
    pub virtual_measurements: bool,
    pub noise: MeasurementNoise,
    pub estimator: EstimatorConfig,
}

impl Cell {
    pub fn scenario(&self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = base.clone();
        cfg.sensors = self.sensors;
        cfg.quantizer.bits = self.bits;
        cfg.measurements_per_sensor = self.measurements_per_sensor;
        cfg.quantizer.kind = self.quantizer;
        cfg.virtual_measurements = self.virtual_measurements;
        cfg.noise = self.noise;
        cfg
    }
}

fn or_base<T: Clone>(v: &[T], base: T) -> Vec<T> {
    if v.is_empty() {
        vec![base]
    } else {
        v.to_vec()
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.runs == 0 {
            return Err(Error::config("sweep.runs", "must be at least 1"));
        }
        if self.estimators.is_empty() {
            return Err(Error::config("sweep.estimators", "need at least one estimator"));
        }
        for e in &self.estimators {
            e.validate()?;
        }
        for cell in self.cells() {
            cell.scenario(&self.base).validate()?;
        }
        Ok(())
    }

    /// Grid cells in row-major factor order.
    pub fn cells(&self) -> Vec<Cell> {
        let b = &self.base;
        let mut out = Vec::new();
        for &estimator in &self.estimators {
            for &noise in &or_base(&self.noise, b.noise) {
                for &quantizer in &or_base(&self.quantizers, b.quantizer.kind) {
                    for &virt in &or_base(&self.virtual_measurements, b.virtual_measurements) {
                        for &bits in &or_base(&self.bits, b.quantizer.bits) {
                            for &p in &or_base(&self.measurements_per_sensor, b.measurements_per_sensor) {
                                for &sensors in &or_base(&self.sensors, b.sensors) {
                                    out.push(Cell {
                                        sensors,
                                        bits,
                                        measurements_per_sensor: p,
                                        quantizer,
                                        virtual_measurements: virt,
                                        noise,
                                        estimator,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Outcome of one Monte Carlo run in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub nmse: Option<f64>,
    pub clip_rate: f64,
    pub error_rate: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub cell: Cell,
    pub runs: Vec<RunOutcome>,
    pub wall_time_s: f64,
}

impl ResultRow {
    fn ok(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.nmse).collect()
    }

    pub fn nmse_mean(&self) -> f64 {
        let v = self.ok();
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Standard error of the mean NMSE.
    pub fn nmse_se(&self) -> f64 {
        let v = self.ok();
        if v.len() < 2 {
            return 0.0;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (var / v.len() as f64).sqrt()
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.nmse.is_none()).count()
    }

    pub fn clip_rate(&self) -> f64 {
        self.runs.iter().map(|r| r.clip_rate).sum::<f64>() / self.runs.len() as f64
    }

    pub fn error_rate(&self) -> f64 {
        self.runs.iter().map(|r| r.error_rate).sum::<f64>() / self.runs.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub const HEADER: [&'static str; 15] = [
        "estimator",
        "lambda",
        "sensors",
        "bits",
        "measurements_per_sensor",
        "quantizer",
        "virtual",
        "noise_kind",
        "noise_value",
        "runs",
        "failures",
        "nmse_mean",
        "nmse_se",
        "clip_rate",
        "error_rate",
    ];

    /// CSV text; the wall-time column is only added on request so that
    /// repeated sweeps produce identical bytes.
    pub fn to_csv(&self, with_timing: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = Self::HEADER.to_vec();
        if with_timing {
            header.push("wall_time_s");
        }
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let c = &row.cell;
            let (noise_kind, noise_value) = match c.noise {
                MeasurementNoise::Variance(v) => ("variance", v),
                MeasurementNoise::ErrorRate(r) => ("error-rate", r),
            };
            let mut rec = vec![
                c.estimator.kind.name().to_string(),
                format!("{:e}", c.estimator.lambda),
                c.sensors.to_string(),
                c.bits.to_string(),
                c.measurements_per_sensor.to_string(),
                match c.quantizer {
                    QuantizerChoice::Uniform => "uniform".into(),
                    QuantizerChoice::Cpq => "cpq".into(),
                },
                c.virtual_measurements.to_string(),
                noise_kind.into(),
                format!("{noise_value:e}"),
                row.runs.len().to_string(),
                row.failures().to_string(),
                format!("{:.9e}", row.nmse_mean()),
                format!("{:.9e}", row.nmse_se()),
                format!("{:.6}", row.clip_rate()),
                format!("{:.6}", row.error_rate()),
            ];
            if with_timing {
                rec.push(format!("{:.3}", row.wall_time_s));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[derive(PartialEq, Eq, Hash)]
struct CalibrationKey(u32, QuantizerChoice, u64, bool);

fn calibration_key(cfg: &ScenarioConfig) -> CalibrationKey {
    let (bits, is_rate) = match cfg.noise {
        MeasurementNoise::Variance(v) => (v.to_bits(), false),
        MeasurementNoise::ErrorRate(r) => (r.to_bits(), true),
    };
    CalibrationKey(cfg.quantizer.bits, cfg.quantizer.kind, bits, is_rate)
}

/// Runs one Monte Carlo realization of a cell.
pub fn run_once(cell: &Cell, base: &ScenarioConfig, calibration: &Calibration, seed: u64, run: u64) -> RunOutcome {
    let cfg = cell.scenario(base);
    let outcome = Scenario::generate(&cfg, calibration, seed, run).and_then(|sc| {
        let est = cell.estimator.fit(&cfg, &sc.records)?;
        Ok((nmse(&est, &sc.field, &sc.eval_points)?, sc.stats))
    });
    match outcome {
        Ok((v, stats)) => RunOutcome { nmse: Some(v), clip_rate: stats.clip_rate, error_rate: stats.error_rate, failure: None },
        Err(e) => RunOutcome { nmse: None, clip_rate: 0.0, error_rate: 0.0, failure: Some(e.to_string()) },
    }
}

/// Runs every cell for `spec.runs` Monte Carlo realizations. Run `r` uses
/// the same seed streams in every cell, so cells are compared on common
/// random numbers.
pub fn run_sweep(spec: &SweepSpec) -> Result<ResultTable> {
    spec.validate()?;
    let cells = spec.cells();
    let mut calibrations: HashMap<CalibrationKey, Calibration> = HashMap::new();
    for cell in &cells {
        let cfg = cell.scenario(&spec.base);
        let key = calibration_key(&cfg);
        if !calibrations.contains_key(&key) {
            calibrations.insert(key, calibrate(&cfg, spec.seed)?);
        }
    }
    let rows = cells
        .par_iter()
        .map(|cell| {
            let start = Instant::now();
            let cal = &calibrations[&calibration_key(&cell.scenario(&spec.base))];
            let runs = (0..spec.runs as u64)
                .into_par_iter()
                .map(|r| run_once(cell, &spec.base, cal, spec.seed, r))
                .collect();
            ResultRow { cell: *cell, runs, wall_time_s: start.elapsed().as_secs_f64() }
        })
        .collect();
    Ok(ResultTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Cycles through the records in order.
    #[default]
    RoundRobin,
    /// Uniform draws with replacement.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OnlineModeChoice {
    #[default]
    SharedAnchors,
    DistinctLocations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    pub mu: f64,
    pub lambda: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub loss: Loss,
    #[serde(default)]
    pub mode: OnlineModeChoice,
    /// Kept coefficients in distinct-location mode; `0` selects the default.
    #[serde(default)]
    pub truncation: usize,
    #[serde(default)]
    pub schedule: Schedule,
    pub steps: usize,
    /// Batch comparator refit period (`1` refits every step).
    #[serde(default = "one")]
    pub comparator_every: usize,
    /// NMSE evaluation period; `0` disables NMSE.
    #[serde(default = "one")]
    pub nmse_every: usize,
}

fn one() -> usize {
    1
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::config("online.lambda", "must be positive"));
        }
        if !(self.mu > 0.0) || !(self.mu * self.lambda < 1.0) {
            return Err(Error::config("online.mu", "need mu > 0 and mu * lambda < 1"));
        }
        if !(self.width > 0.0) {
            return Err(Error::config("online.width", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("online.steps", "must be at least 1"));
        }
        if self.comparator_every == 0 {
            return Err(Error::config("online.comparator_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// One row of an online trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub cost: f64,
    pub running_average: f64,
    /// Average cost of the batch optimum on the first `t` presented records;
    /// NaN where not computed.
    pub comparator_average: f64,
    pub envelope: f64,
    pub norm: f64,
    pub norm_bound: f64,
    /// NMSE of `w^(t)` (before the update at step `t`); NaN where skipped.
    pub nmse: f64,
}

impl TraceRow {
    /// Whether the regret bound holds at this row.
    pub fn within_bound(&self) -> bool {
        self.comparator_average.is_nan() || self.running_average <= self.comparator_average + self.envelope
    }
}

pub const TRACE_HEADER: [&str; 8] =
    ["t", "cost", "running_average", "comparator_average", "envelope", "norm", "norm_bound", "nmse"];

pub fn trace_to_csv(rows: &[TraceRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            format!("{:.12e}", r.cost),
            format!("{:.12e}", r.running_average),
            format!("{:.12e}", r.comparator_average),
            format!("{:.12e}", r.envelope),
            format!("{:.12e}", r.norm),
            format!("{:.12e}", r.norm_bound),
            format!("{:.12e}", r.nmse),
        ])
        .map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
}

/// Presentation order of record indices.
pub fn presentation_order(schedule: Schedule, records: usize, steps: usize, seed: u64, run: u64) -> Vec<usize> {
    match schedule {
        Schedule::RoundRobin => (0..steps).map(|t| t % records).collect(),
        Schedule::Random => {
            let mut rng = stream(seed, run, Source::Schedule);
            (0..steps).map(|_| rng.random_range(0..records)).collect()
        }
    }
}

/// Average cost of the batch optimum over the multiset `counts`
/// (record index → multiplicity).
pub fn batch_comparator(records: &[MeasurementRecord], counts: &[usize], kernel: &KernelSpec, lambda: f64) -> Result<f64> {
    let chosen: Vec<usize> = (0..records.len()).filter(|&i| counts[i] > 0).collect();
    let subset: Vec<MeasurementRecord> = chosen.iter().map(|&i| records[i].clone()).collect();
    // assemble_design reorders records anchor by anchor; replay that order
    // for the weights.
    let design = assemble_design(&subset)?;
    let mut order: Vec<usize> = Vec::with_capacity(subset.len());
    for a in 0..design.anchor_count() {
        for (k, r) in subset.iter().enumerate() {
            if r.location.same_point(&design.anchors[a]) {
                order.push(k);
            }
        }
    }
    let weights = DVector::from_iterator(order.len(), order.iter().map(|&k| counts[chosen[k]] as f64));
    let total = weights.sum();
    let design = design.with_weights(weights)?;
    let opts = SvmOptions { qp: crate::qp::QpOptions { tol: 1e-10, max_iter: 200 }, ..SvmOptions::default() };
    let (_, dual) = fit_svm_nonparametric_design(&design, kernel, lambda, opts)?;
    Ok(dual.primal_objective / total)
}

/// Runs the online estimator on one synthesized data set (virtual records
/// excluded) and records the per-step trace.
pub fn online_trace(scenario: &ScenarioConfig, online: &OnlineConfig, seed: u64, run: u64) -> Result<Vec<TraceRow>> {
    online.validate()?;
    let calibration = calibrate(scenario, seed)?;
    let sc = Scenario::generate(scenario, &calibration, seed, run)?;
    let records: Vec<MeasurementRecord> = sc.records.into_iter().filter(|r| !r.is_virtual).collect();
    let kernel = KernelSpec::gaussian(online.width, scenario.channels());
    let order = presentation_order(online.schedule, records.len(), online.steps, seed, run);
    let mut state = match online.mode {
        OnlineModeChoice::SharedAnchors => {
            OnlineState::shared(kernel.clone(), online.loss, online.lambda, online.mu, sc.sensors.clone())?
        }
        OnlineModeChoice::DistinctLocations => {
            let trunc = if online.truncation == 0 { default_truncation(online.mu, online.lambda) } else { online.truncation };
            OnlineState::distinct(kernel.clone(), online.loss, online.lambda, online.mu, Some(trunc))?
        }
    };
    let mut ledger = RegretLedger::new(online.lambda, online.mu);
    for &i in &order {
        ledger.observe(&kernel, &records[i]);
    }
    let mut counts = vec![0usize; records.len()];
    let comparator_sum_ok = online.loss == Loss::L1Eps;
    let mut rows = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        let t = k + 1;
        let nmse_v = if online.nmse_every > 0 && (t == 1 || t % online.nmse_every == 0) {
            nmse_with(|x| state.predict(x), &sc.field, &sc.eval_points)?
        } else {
            f64::NAN
        };
        let norm = state.norm_sq().sqrt();
        let report = state.step(&records[i])?;
        ledger.record(report.cost);
        counts[i] += 1;
        let comparator = if comparator_sum_ok && (t == 1 || t % online.comparator_every == 0 || t == order.len()) {
            batch_comparator(&records, &counts, &kernel, online.lambda)
                .map_err(|e| Error::Solver(format!("batch comparator at t = {t}: {e}")))?
        } else {
            f64::NAN
        };
        rows.push(TraceRow {
            t,
            cost: report.cost,
            running_average: ledger.average_cost(),
            comparator_average: comparator,
            envelope: regret_envelope(&ledger, t)?,
            norm,
            norm_bound: ledger.norm_bound(),
            nmse: nmse_v,
        });
    }
    Ok(rows)
}

/// Paired one-sided sign test: probability of at least `wins` successes out
/// of `n` under a fair coin.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    // Σ_{k ≥ wins} C(n, k) / 2^n, accumulated in log space.
    let ln_choose = |k: usize| -> f64 {
        let lg = |x: usize| (1..=x).map(|v| (v as f64).ln()).sum::<f64>();
        lg(n) - lg(k) - lg(n - k)
    };
    (wins..=n).map(|k| (ln_choose(k) - n as f64 * std::f64::consts::LN_2).exp()).sum::<f64>().min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::gain_field;

    fn field() -> (GroundTruthField, Vec<Location>) {
        let cfg = ScenarioConfig::line(2, 3, 1, 2, QuantizerChoice::Uniform);
        let pts: Vec<Location> = (0..5).map(|i| Location(vec![i as f64 / 4.0])).collect();
        let f = gain_field(&cfg, pts.clone(), vec![DVector::zeros(5); 2]).unwrap();
        (f, pts)
    }

    #[test]
    fn nmse_examples() {
        let (f, pts) = field();
        assert_eq!(nmse_with(|x| f.eval(x), &f, &pts).unwrap(), 0.0);
        assert_eq!(nmse_with(|_| DVector::zeros(3), &f, &pts).unwrap(), 1.0);
        assert!((nmse_with(|x| f.eval(x) * 2.0, &f, &pts).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p(10, 10) - 1.0 / 1024.0).abs() < 1e-12);
        assert!((sign_test_p(0, 4) - 1.0).abs() < 1e-12);
        assert!((sign_test_p(3, 4) - 5.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn round_robin_order() {
        assert_eq!(presentation_order(Schedule::RoundRobin, 3, 7, 0, 0), vec![0, 1, 2, 0, 1, 2, 0]);
    }
}
