//! Power-law charge-flux model of the reset transition.
//!
//! Before reset the charge grows as a power of the flux; after reset it stays
//! at `q_rst`:
//!
//! ```text
//! Q(φ) = q_rst · min(1, (φ / phi_rst)^n)
//! ```
//!
//! No residual charge accumulates past `phi_rst`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::ResetPoint;
use crate::qphi::QPhiCurve;

/// Default normalized-flux window for [`fit_exponent`].
pub const DEFAULT_FIT_RANGE: (f64, f64) = (0.10, 0.95);
/// Minimum number of points inside the fit window.
pub const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Reset charge, coulombs.
    pub q_rst: f64,
    /// Reset flux, volt-seconds.
    pub phi_rst: f64,
    /// Exponent of the pre-reset branch.
    pub n: f64,
}

impl ModelParams {
    pub fn new(q_rst: f64, phi_rst: f64, n: f64) -> Result<Self> {
        let params = Self { q_rst, phi_rst, n };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("q_rst", self.q_rst), ("phi_rst", self.phi_rst), ("n", self.n)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive and finite, got {value}")));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.phi_rst, self.q_rst, self.n]
    }
}

/// Charge predicted by the model at flux `phi`.
pub fn model_charge(phi: f64, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    if phi < 0.0 {
        return Err(Error::NegativeFlux(phi));
    }
    if phi >= params.phi_rst {
        return Ok(params.q_rst);
    }
    Ok(params.q_rst * (phi / params.phi_rst).powf(params.n))
}

/// `dQ/dφ` of the model. At the corner `phi == phi_rst` the left limit is
/// returned; past it the memductance is zero.
pub fn memductance(phi: f64, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    if phi < 0.0 {
        return Err(Error::NegativeFlux(phi));
    }
    if phi > params.phi_rst {
        return Ok(0.0);
    }
    let x = phi / params.phi_rst;
    Ok(params.n * params.q_rst / params.phi_rst * x.powf(params.n - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCurve {
    /// `(phi / phi_rst, q / q_rst)` pairs in curve order.
    pub points: Vec<(f64, f64)>,
    pub source_cycle_id: u64,
}

impl NormalizedCurve {
    pub fn max_q(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Scales a curve so that its (first) reset point lands on `(1, 1)`.
pub fn normalize_curve(curve: &QPhiCurve, reset: &ResetPoint) -> Result<NormalizedCurve> {
    if !(reset.phi_rst > 0.0 && reset.q_rst > 0.0) {
        return Err(Error::InvalidReset { phi_rst: reset.phi_rst, q_rst: reset.q_rst });
    }
    Ok(NormalizedCurve {
        points: curve.points.iter().map(|p| (p.phi / reset.phi_rst, p.q / reset.q_rst)).collect(),
        source_cycle_id: curve.source_cycle_id,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub n: f64,
    /// Intercept of `ln q` against `ln φ`; zero for a perfectly normalized curve.
    pub log_intercept: f64,
    pub rms_log_residual: f64,
    pub point_count: usize,
    pub fit_range: (f64, f64),
}

/// Fits the exponent `n` as the least-squares slope of `ln q` against `ln φ`
/// over points whose normalized flux lies in `fit_range`.
pub fn fit_exponent(normalized: &NormalizedCurve, fit_range: (f64, f64)) -> Result<ExponentFit> {
    let (lo, hi) = fit_range;
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(Error::InvalidConfig(format!("fit range ({lo}, {hi}) must satisfy 0 < lo < hi < 1")));
    }
    let mut logs = Vec::new();
    for (index, &(x, y)) in normalized.points.iter().enumerate() {
        if x < lo || x > hi {
            continue;
        }
        if !(y > 0.0) {
            return Err(Error::NonPositiveCharge(index));
        }
        logs.push((x.ln(), y.ln()));
    }
    if logs.len() < MIN_FIT_POINTS {
        return Err(Error::TooFewFitPoints { found: logs.len(), required: MIN_FIT_POINTS });
    }
    let fit = crate::extraction::fit_line(&logs)?;
    Ok(ExponentFit {
        n: fit.slope,
        log_intercept: fit.intercept,
        rms_log_residual: fit.rms_residual,
        point_count: logs.len(),
        fit_range,
    })
}

/// Root-mean-square of `(q − Q(φ)) / q_rst` over all points of the curve.
/// Points with negative flux are compared against zero charge.
pub fn model_residual(curve: &QPhiCurve, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    if curve.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let mut ss = 0.0;
    for p in &curve.points {
        let predicted = model_charge(p.phi.max(0.0), params)?;
        ss += ((p.q - predicted) / params.q_rst).powi(2);
    }
    Ok((ss / curve.len() as f64).sqrt())
}

/// JSON parameter record for one fitted cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub cycle_id: u64,
    pub q_rst: f64,
    pub phi_rst: f64,
    pub n: f64,
    pub rms_residual: f64,
    pub fit_range: (f64, f64),
}
