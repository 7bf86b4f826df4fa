//! Online estimation by stochastic subgradient descent in the RKHS.
//!
//! At step `t` the estimate `w^(t) = Σ_i K(·, x_i) c_i` is updated with the
//! record `(x, φ, y, ε)` as
//!
//! ```text
//!     μ_t = μ / √t,   e = y − φᵀw^(t)(x)
//!     c_i ← (1 − 2μ_tλ) c_i            for every existing coefficient
//!     c_new = μ_t L′(e) φ              placed at x
//! ```

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::batch::MapEstimate;
use crate::error::{Error, Result};
use crate::kernels::{BasisSpec, KernelSpec};
use crate::model::{Location, MeasurementRecord, PowerVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `max(0, |e| − ε)`.
    #[default]
    L1Eps,
    /// `max(0, e² − ε)`.
    L2Eps,
}

impl Loss {
    pub fn value(self, e: f64, eps: f64) -> f64 {
        match self {
            Loss::L1Eps => (e.abs() - eps).max(0.0),
            Loss::L2Eps => (e * e - eps).max(0.0),
        }
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Subgradient `L′(e)` with `sgn(0) = 0`.
pub fn loss_subgradient(loss: Loss, e: f64, eps: f64) -> f64 {
    match loss {
        Loss::L1Eps => 0.5 * (sgn(e - eps) + sgn(e + eps)),
        Loss::L2Eps => {
            if e * e > eps {
                2.0 * e
            } else {
                0.0
            }
        }
    }
}

/// Truncation length at which a coefficient shrunk at the base rate `μ` for
/// `I` steps retains at most `1e-6` of its amplitude.
pub fn default_truncation(mu: f64, lambda: f64) -> usize {
    let rho = 1.0 - 2.0 * mu * lambda;
    if !(rho > 0.0 && rho < 1.0) {
        return 1;
    }
    ((1e-6f64).ln() / rho.ln()).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub enum OnlineMode {
    /// Every step appends a new kernel at the record location; only the most
    /// recent `truncation` coefficients are kept (`None` keeps all).
    DistinctLocations { truncation: Option<usize> },
    /// Coefficients live on a fixed anchor set; records must come from one of
    /// the anchors.
    SharedAnchors { anchors: Vec<Location> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub t: usize,
    pub rate: f64,
    pub error: f64,
    pub subgradient: f64,
    /// Instantaneous cost `C(w^(t), record)` before the update.
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineState {
    kernel: KernelSpec,
    loss: Loss,
    lambda: f64,
    mu: f64,
    mode: OnlineMode,
    /// Number of completed steps; the next step uses `t + 1`.
    t: usize,
    locations: VecDeque<Location>,
    coeffs: VecDeque<DVector<f64>>,
    norm_sq: f64,
}

impl OnlineState {
    fn new(kernel: KernelSpec, loss: Loss, lambda: f64, mu: f64, mode: OnlineMode) -> Result<Self> {
        kernel.validate()?;
        if !(lambda > 0.0) || !(mu > 0.0) {
            return Err(Error::invalid("lambda", "lambda and mu must be positive"));
        }
        if !(mu * lambda < 1.0) {
            return Err(Error::invalid("mu", format!("need mu * lambda < 1, got {}", mu * lambda)));
        }
        if !kernel.is_positive_definite() {
            return Err(Error::invalid("kernel", "online estimation needs a positive definite kernel"));
        }
        let (locations, coeffs) = match &mode {
            OnlineMode::DistinctLocations { truncation } => {
                if *truncation == Some(0) {
                    return Err(Error::invalid("truncation", "must be at least 1"));
                }
                (VecDeque::new(), VecDeque::new())
            }
            OnlineMode::SharedAnchors { anchors } => {
                if anchors.is_empty() {
                    return Err(Error::EmptyInput("online anchors"));
                }
                let m = kernel.channels();
                (anchors.iter().cloned().collect(), anchors.iter().map(|_| DVector::zeros(m)).collect())
            }
        };
        Ok(OnlineState { kernel, loss, lambda, mu, mode, t: 0, locations, coeffs, norm_sq: 0.0 })
    }

    pub fn distinct(kernel: KernelSpec, loss: Loss, lambda: f64, mu: f64, truncation: Option<usize>) -> Result<Self> {
        Self::new(kernel, loss, lambda, mu, OnlineMode::DistinctLocations { truncation })
    }

    pub fn shared(kernel: KernelSpec, loss: Loss, lambda: f64, mu: f64, anchors: Vec<Location>) -> Result<Self> {
        Self::new(kernel, loss, lambda, mu, OnlineMode::SharedAnchors { anchors })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn mode(&self) -> &OnlineMode {
        &self.mode
    }

    pub fn locations(&self) -> impl Iterator<Item = &Location> {
        self.locations.iter()
    }

    pub fn coefficients(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.coeffs.iter()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `w^(t)(x)`.
    pub fn predict(&self, x: &Location) -> PowerVector {
        let mut out = DVector::zeros(self.kernel.channels());
        for (loc, c) in self.locations.iter().zip(&self.coeffs) {
            out += self.kernel.diagonal(x, loc).component_mul(c);
        }
        out
    }

    /// `‖w^(t)‖²_H`, maintained incrementally.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq.max(0.0)
    }

    /// `‖w^(t)‖²_H = cᵀKc` recomputed from the expansion.
    pub fn exact_norm_sq(&self) -> f64 {
        let mut total = 0.0;
        for (xi, ci) in self.locations.iter().zip(&self.coeffs) {
            for (xj, cj) in self.locations.iter().zip(&self.coeffs) {
                total += ci.dot(&self.kernel.diagonal(xi, xj).component_mul(cj));
            }
        }
        total
    }

    fn check_record(&self, record: &MeasurementRecord) -> Result<()> {
        let m = self.kernel.channels();
        if record.channels() != m {
            return Err(Error::DimensionMismatch { context: "online record channels", expected: m, got: record.channels() });
        }
        Ok(())
    }

    /// `L(y − φᵀw(x)) + λ‖w‖²_H` at the current state.
    pub fn instantaneous_cost(&self, record: &MeasurementRecord) -> Result<f64> {
        self.check_record(record)?;
        let e = record.y - record.phi.dot(&self.predict(&record.location));
        Ok(self.loss.value(e, record.eps) + self.lambda * self.norm_sq())
    }

    pub fn step(&mut self, record: &MeasurementRecord) -> Result<StepReport> {
        self.check_record(record)?;
        let shared_index = match &self.mode {
            OnlineMode::SharedAnchors { anchors } => Some(
                anchors
                    .iter()
                    .position(|a| a.same_point(&record.location))
                    .ok_or_else(|| Error::invalid("record", "location is not one of the shared anchors"))?,
            ),
            OnlineMode::DistinctLocations { .. } => None,
        };
        let t = self.t + 1;
        let rate = self.mu / (t as f64).sqrt();
        let wx = self.predict(&record.location);
        let e = record.y - record.phi.dot(&wx);
        let cost = self.loss.value(e, record.eps) + self.lambda * self.norm_sq();
        let g = loss_subgradient(self.loss, e, record.eps);
        let shrink = 1.0 - 2.0 * rate * self.lambda;
        for c in self.coeffs.iter_mut() {
            *c *= shrink;
        }
        let new = &record.phi * (rate * g);
        let kxx = self.kernel.diagonal(&record.location, &record.location);
        // ‖ρw + K(·,x)g‖² = ρ²‖w‖² + 2ρ gᵀw(x) + gᵀK(x,x)g
        self.norm_sq = shrink * shrink * self.norm_sq + 2.0 * shrink * new.dot(&wx) + new.dot(&kxx.component_mul(&new));
        match shared_index {
            Some(i) => self.coeffs[i] += new,
            None => {
                self.locations.push_back(record.location.clone());
                self.coeffs.push_back(new);
                if let OnlineMode::DistinctLocations { truncation: Some(limit) } = self.mode {
                    while self.coeffs.len() > limit {
                        let x_old = self.locations.pop_front().expect("nonempty");
                        let c_old = self.coeffs.pop_front().expect("nonempty");
                        // ‖w − K(·,x)c‖² = ‖w‖² − 2cᵀw(x) + cᵀK(x,x)c with w the
                        // remaining expansion.
                        let rest = self.predict(&x_old);
                        let self_term = c_old.dot(&self.kernel.diagonal(&x_old, &x_old).component_mul(&c_old));
                        self.norm_sq -= 2.0 * c_old.dot(&rest) + self_term;
                    }
                }
            }
        }
        self.t = t;
        Ok(StepReport { t, rate, error: e, subgradient: g, cost })
    }

    /// Snapshot as a nonparametric map estimate.
    pub fn to_map_estimate(&self) -> MapEstimate {
        let m = self.kernel.channels();
        let mut c = DVector::zeros(self.coeffs.len() * m);
        for (i, ci) in self.coeffs.iter().enumerate() {
            c.rows_mut(i * m, m).copy_from(ci);
        }
        MapEstimate {
            anchors: self.locations.iter().cloned().collect(),
            c,
            theta: DVector::zeros(0),
            kernel: self.kernel.clone(),
            basis: BasisSpec::None,
            lambda: self.lambda,
        }
    }
}

/// Free-function form of [`OnlineState::step`].
pub fn step(state: &mut OnlineState, record: &MeasurementRecord) -> Result<StepReport> {
    state.step(record)
}

/// Free-function form of [`OnlineState::instantaneous_cost`].
pub fn instantaneous_cost(state: &OnlineState, record: &MeasurementRecord) -> Result<f64> {
    state.instantaneous_cost(record)
}

/// Running sums for the empirical regret check.
#[derive(Debug, Clone)]
pub struct RegretLedger {
    pub lambda: f64,
    pub mu: f64,
    /// Bound on `λ_max(K(x, x))` over observed locations.
    pub lambda_bar_sq: f64,
    /// Bound on `‖φ‖₂` over observed records.
    pub phi_bar: f64,
    pub cost_sum: f64,
    pub comparator_sum: f64,
    pub steps: usize,
}

impl RegretLedger {
    pub fn new(lambda: f64, mu: f64) -> Self {
        RegretLedger { lambda, mu, lambda_bar_sq: 0.0, phi_bar: 0.0, cost_sum: 0.0, comparator_sum: 0.0, steps: 0 }
    }

    /// Updates `λ̄²` and `φ̄` with one record.
    pub fn observe(&mut self, kernel: &KernelSpec, record: &MeasurementRecord) {
        self.lambda_bar_sq = self.lambda_bar_sq.max(kernel.max_self_eigenvalue(std::slice::from_ref(&record.location)));
        self.phi_bar = self.phi_bar.max(record.phi.norm());
    }

    pub fn record(&mut self, cost: f64) {
        self.cost_sum += cost;
        self.steps += 1;
    }

    pub fn average_cost(&self) -> f64 {
        self.cost_sum / self.steps.max(1) as f64
    }

    /// `a₂ = λ̄²φ̄²/(8λ²μ)`.
    pub fn a2(&self) -> f64 {
        self.lambda_bar_sq * self.phi_bar * self.phi_bar / (8.0 * self.lambda * self.lambda * self.mu)
    }

    /// `a₁ = 4(λ̄²φ̄²μ + a₂)`.
    pub fn a1(&self) -> f64 {
        4.0 * (self.lambda_bar_sq * self.phi_bar * self.phi_bar * self.mu + self.a2())
    }

    /// Bound `U = λ̄φ̄/(2λ)` on `‖w^(t)‖_H`.
    pub fn norm_bound(&self) -> f64 {
        self.lambda_bar_sq.sqrt() * self.phi_bar / (2.0 * self.lambda)
    }
}

/// `a₁/√T + a₂/T`.
pub fn regret_envelope(ledger: &RegretLedger, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("T", "must be at least 1"));
    }
    let t = t as f64;
    Ok(ledger.a1() / t.sqrt() + ledger.a2() / t)
}
