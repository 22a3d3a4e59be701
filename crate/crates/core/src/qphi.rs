//! Charge-flux transform: cumulative trapezoid integrals of voltage and current.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::SweepTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QPhiPoint {
    /// Flux in volt-seconds.
    pub phi: f64,
    /// Charge in coulombs.
    pub q: f64,
    /// Index of the source sample in the trace.
    pub sample_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPhiCurve {
    pub points: Vec<QPhiPoint>,
    pub source_cycle_id: u64,
}

impl QPhiCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn phi(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.phi).collect()
    }

    pub fn q(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.q).collect()
    }

    pub fn max_phi(&self) -> f64 {
        self.points.iter().map(|p| p.phi).fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV dump with header `phi,q,sample_index`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phi,q,sample_index\n");
        for p in &self.points {
            let _ = writeln!(out, "{:e},{:e},{}", p.phi, p.q, p.sample_index);
        }
        out
    }
}

/// Integrates a trace into its Q-φ curve.
///
/// Point `k` carries the trapezoid integrals of `v` and `i` over
/// `[t_0, t_k]`; the first point is the origin. Negative voltages are
/// integrated as they are, so the flux may locally decrease.
pub fn integrate_trace(trace: &SweepTrace) -> Result<QPhiCurve> {
    trace.check()?;
    let samples = &trace.samples;
    let mut points = Vec::with_capacity(samples.len());
    let (mut phi, mut q) = (0.0, 0.0);
    points.push(QPhiPoint { phi, q, sample_index: 0 });
    for (k, pair) in samples.windows(2).enumerate() {
        let dt = pair[1].t - pair[0].t;
        phi += 0.5 * dt * (pair[0].v + pair[1].v);
        q += 0.5 * dt * (pair[0].i + pair[1].i);
        points.push(QPhiPoint { phi, q, sample_index: k + 1 });
    }
    Ok(QPhiCurve { points, source_cycle_id: trace.cycle_id })
}

fn sample_time(curve: &QPhiCurve, trace: &SweepTrace, k: usize) -> Result<f64> {
    let index = curve.points[k].sample_index;
    trace
        .samples
        .get(index)
        .map(|s| s.t)
        .ok_or_else(|| Error::CurveTraceMismatch(format!("sample index {index} beyond trace of {}", trace.len())))
}

/// Inverts the flux of `curve` back to time by linear interpolation.
pub fn phi_to_time(curve: &QPhiCurve, trace: &SweepTrace, phi_query: f64) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::EmptyCurve);
    }
    if curve.source_cycle_id != trace.cycle_id {
        return Err(Error::CurveTraceMismatch(format!(
            "curve of cycle {} against trace of cycle {}",
            curve.source_cycle_id, trace.cycle_id
        )));
    }
    let max = curve.max_phi();
    if !(0.0..=max).contains(&phi_query) {
        return Err(Error::FluxOutOfRange { query: phi_query, max });
    }

    let pts = &curve.points;
    if let Some(k) = pts.windows(2).position(|w| w[0].phi == w[1].phi && w[0].phi == phi_query) {
        let end = pts[k..].iter().position(|p| p.phi != phi_query).map_or(pts.len() - 1, |m| k + m - 1);
        return Err(Error::FlatFlux { start: k, end });
    }
    if pts.len() == 1 {
        return sample_time(curve, trace, 0);
    }
    let k = pts
        .windows(2)
        .position(|w| w[0].phi.min(w[1].phi) <= phi_query && phi_query <= w[0].phi.max(w[1].phi))
        .ok_or(Error::FluxOutOfRange { query: phi_query, max })?;
    let (a, b) = (pts[k], pts[k + 1]);
    if b.phi < a.phi {
        return Err(Error::NonMonotoneFlux { index: k });
    }
    let (ta, tb) = (sample_time(curve, trace, k)?, sample_time(curve, trace, k + 1)?);
    let frac = (phi_query - a.phi) / (b.phi - a.phi);
    Ok(ta + frac * (tb - ta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::SweepSample;
    use approx::assert_relative_eq;

    fn trace_from(f: impl Fn(f64) -> (f64, f64), times: &[f64]) -> SweepTrace {
        let samples = times
            .iter()
            .map(|&t| {
                let (v, i) = f(t);
                SweepSample::new(t, v, i)
            })
            .collect();
        SweepTrace::new(0, samples).unwrap()
    }

    #[test]
    fn constant_signals() {
        let trace = trace_from(|_| (1.0, 1e-3), &[0.0, 1.0, 2.0, 3.0]);
        let curve = integrate_trace(&trace).unwrap();
        let expect = [(0.0, 0.0), (1.0, 1e-3), (2.0, 2e-3), (3.0, 3e-3)];
        for (p, (phi, q)) in curve.points.iter().zip(expect) {
            assert_relative_eq!(p.phi, phi);
            assert_relative_eq!(p.q, q);
        }
        assert_eq!(curve.points[2].sample_index, 2);
        assert_relative_eq!(phi_to_time(&curve, &trace, 1.5).unwrap(), 1.5);
        assert_eq!(phi_to_time(&curve, &trace, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn linear_ramp_is_exact() {
        let trace = trace_from(|t| (t, 0.0), &[0.0, 1.0, 2.0, 3.0]);
        let curve = integrate_trace(&trace).unwrap();
        // analytic t^2 / 2
        assert_eq!(curve.phi(), vec![0.0, 0.5, 2.0, 4.5]);
        assert!(curve.q().iter().all(|&q| q == 0.0));
        assert_eq!(phi_to_time(&curve, &trace, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn quarter_sine_matches_antiderivative() {
        let omega = 2.0 * std::f64::consts::PI;
        let n = 10_000;
        let t_end = std::f64::consts::FRAC_PI_2 / omega;
        let times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect();
        let trace = trace_from(|t| ((omega * t).sin(), 0.0), &times);
        let curve = integrate_trace(&trace).unwrap();
        let exact = (1.0 - (omega * t_end).cos()) / omega;
        let last = curve.points.last().unwrap().phi;
        assert!(((last - exact) / exact).abs() < 1e-6, "{last} vs {exact}");
    }

    #[test]
    fn query_out_of_range_and_flat() {
        let trace = trace_from(|t| (if (1.0..=2.0).contains(&t) { 0.0 } else { 1.0 }, 0.0), &[0.0, 1.0, 2.0, 3.0]);
        let curve = integrate_trace(&trace).unwrap();
        // phi = 0, 0.5, 0.5, 1.0
        assert!(matches!(phi_to_time(&curve, &trace, -0.1), Err(Error::FluxOutOfRange { .. })));
        assert!(matches!(phi_to_time(&curve, &trace, 1.1), Err(Error::FluxOutOfRange { .. })));
        assert_eq!(phi_to_time(&curve, &trace, 0.5), Err(Error::FlatFlux { start: 1, end: 2 }));
        assert_relative_eq!(phi_to_time(&curve, &trace, 0.25).unwrap(), 0.5);
        assert_relative_eq!(phi_to_time(&curve, &trace, 0.75).unwrap(), 2.5);
    }

    #[test]
    fn decreasing_flux_bracket_is_rejected() {
        let trace = trace_from(|t| (if t < 1.5 { 1.0 } else { -3.0 }, 0.0), &[0.0, 1.0, 2.0, 3.0]);
        let curve = integrate_trace(&trace).unwrap();
        // phi = 0, 1, 0, -3: query 0.5 is first bracketed by an increasing segment
        assert_relative_eq!(phi_to_time(&curve, &trace, 0.5).unwrap(), 0.5);
        let curve = QPhiCurve {
            points: vec![
                QPhiPoint { phi: 0.0, q: 0.0, sample_index: 0 },
                QPhiPoint { phi: 2.0, q: 0.0, sample_index: 1 },
                QPhiPoint { phi: 1.0, q: 0.0, sample_index: 2 },
                QPhiPoint { phi: 3.0, q: 0.0, sample_index: 3 },
            ],
            source_cycle_id: 0,
        };
        assert_relative_eq!(phi_to_time(&curve, &trace, 1.0).unwrap(), 0.5);
        let mut shifted = curve.clone();
        shifted.points[0].phi = 1.5;
        assert!(matches!(phi_to_time(&shifted, &trace, 1.2), Err(Error::NonMonotoneFlux { index: 1 })));
    }

    #[test]
    fn invalid_trace_is_rejected() {
        let trace = SweepTrace { cycle_id: 0, samples: vec![SweepSample::new(0.0, 0.0, 0.0)] };
        assert!(matches!(integrate_trace(&trace), Err(Error::InvalidTrace(_))));
    }

    #[test]
    fn csv_dump_header() {
        let trace = trace_from(|_| (1.0, 1.0), &[0.0, 1.0, 2.0, 3.0]);
        let csv = integrate_trace(&trace).unwrap().to_csv();
        assert!(csv.starts_with("phi,q,sample_index\n0e0,0e0,0\n1e0,1e0,1\n"));
    }
}
