//! Per-cycle analysis chain: integrate, extract the reset point, fit the exponent.

use rayon::prelude::*;

use crate::error::Result;
use crate::extraction::{extract, Extraction, ExtractionConfig};
use crate::model::{fit_exponent, model_residual, normalize_curve, ExponentFit, ModelParams, ParamRecord};
use crate::qphi::{integrate_trace, QPhiCurve};
use crate::trace::{CycleSet, SweepTrace};
use crate::variability::{EnsembleRecord, ParameterEnsemble};

#[derive(Debug, Clone, PartialEq)]
pub struct CycleAnalysis {
    pub cycle_id: u64,
    pub curve: QPhiCurve,
    pub extraction: Extraction,
    pub exponent: ExponentFit,
    pub params: ModelParams,
    /// RMS of `(q − Q(φ)) / q_rst` over the whole curve.
    pub rms_residual: f64,
}

impl CycleAnalysis {
    pub fn param_record(&self) -> ParamRecord {
        ParamRecord {
            cycle_id: self.cycle_id,
            q_rst: self.params.q_rst,
            phi_rst: self.params.phi_rst,
            n: self.params.n,
            rms_residual: self.rms_residual,
            fit_range: self.exponent.fit_range,
        }
    }

    pub fn ensemble_record(&self) -> EnsembleRecord {
        EnsembleRecord { cycle_id: self.cycle_id, params: self.params, reset: Some(self.extraction.reset.clone()) }
    }
}

pub fn analyze_cycle(trace: &SweepTrace, config: &ExtractionConfig, fit_range: (f64, f64)) -> Result<CycleAnalysis> {
    let curve = integrate_trace(trace)?;
    let extraction = extract(&curve, trace, config)?;
    let normalized = normalize_curve(&curve, &extraction.reset)?;
    let exponent = fit_exponent(&normalized, fit_range)?;
    let params = ModelParams::new(extraction.reset.q_rst, extraction.reset.phi_rst, exponent.n)?;
    let rms_residual = model_residual(&curve, &params)?;
    Ok(CycleAnalysis { cycle_id: trace.cycle_id, curve, extraction, exponent, params, rms_residual })
}

/// Analyzes every cycle in parallel. Results keep the order of `cycles`.
pub fn analyze_cycles(
    cycles: &CycleSet,
    config: &ExtractionConfig,
    fit_range: (f64, f64),
) -> Vec<(u64, Result<CycleAnalysis>)> {
    cycles.traces.par_iter().map(|t| (t.cycle_id, analyze_cycle(t, config, fit_range))).collect()
}

/// Ensemble of the successfully analyzed cycles.
pub fn ensemble_of(results: &[(u64, Result<CycleAnalysis>)]) -> ParameterEnsemble {
    ParameterEnsemble {
        records: results.iter().filter_map(|(_, r)| r.as_ref().ok().map(CycleAnalysis::ensemble_record)).collect(),
    }
}
