//! Reset-point extraction by the two-line method.
//!
//! A plateau line is fitted where the charge stops growing and a rise line is
//! fitted to the upper part of the increasing branch just before it. Their
//! intersection is the reset point `(phi_rst, q_rst)`; the reset voltage and
//! current are then read from the raw trace at the time where the flux
//! reaches `phi_rst`.
//!
//! Plateau detection works on local slopes `dq/dφ` estimated by least squares
//! over a sliding flux window (a two-point window is the plain secant). A
//! point is "low-slope" when its local slope is at most
//! `plateau_slope_fraction` times the median local slope of the rising
//! points, which are found in a first pass against the steepest slope on the
//! curve. Because the window smears the corner, every detected run is
//! extended backwards over points that still sit on its fitted line.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qphi::{phi_to_time, QPhiCurve};
use crate::trace::SweepTrace;

/// Relative slope difference under which the two lines count as parallel.
pub const PARALLEL_TOLERANCE: f64 = 1e-6;

/// Points within this many plateau-fit rms residuals of the plateau line are
/// absorbed when a plateau is extended backwards.
const EXTEND_SIGMAS: f64 = 3.0;
/// Backward extension stops after this many consecutive off-line points.
const EXTEND_MISSES: usize = 3;
/// Residual floor for noiseless data, relative to the charge range.
const EXTEND_FLOOR: f64 = 1e-9;
/// Every plateau leaves at least this many points for the rise fit.
const MIN_RISE_POINTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    /// Coulombs per volt-second.
    pub slope: f64,
    /// Coulombs.
    pub intercept: f64,
    /// Root-mean-square vertical residual, coulombs.
    pub rms_residual: f64,
    /// Half-open range of fitted curve points.
    pub index_range: Range<usize>,
}

impl LineFit {
    pub fn eval(&self, phi: f64) -> f64 {
        self.slope * phi + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetPoint {
    pub phi_rst: f64,
    pub q_rst: f64,
    pub v_rst: f64,
    pub i_rst: f64,
    pub t_rst: f64,
    pub rise_fit: LineFit,
    pub plateau_fit: LineFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Low-slope threshold as a fraction of the median rising slope.
    pub plateau_slope_fraction: f64,
    pub plateau_min_points: usize,
    /// Trailing fraction of pre-plateau points used for the rise fit.
    pub rise_window_fraction: f64,
    /// Upper bound on either fit's rms residual, as a fraction of the charge range.
    pub max_rms_fraction: f64,
    /// Flux width of the local-slope window, as a fraction of the flux span.
    pub slope_window_fraction: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            plateau_slope_fraction: 0.05,
            plateau_min_points: 5,
            rise_window_fraction: 0.05,
            max_rms_fraction: 0.05,
            slope_window_fraction: 0.02,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("plateau_slope_fraction", self.plateau_slope_fraction),
            ("rise_window_fraction", self.rise_window_fraction),
            ("max_rms_fraction", self.max_rms_fraction),
            ("slope_window_fraction", self.slope_window_fraction),
        ];
        for (name, value) in fractions {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {value}")));
            }
        }
        if self.plateau_min_points < 2 {
            return Err(Error::InvalidConfig(format!(
                "plateau_min_points must be >= 2, got {}",
                self.plateau_min_points
            )));
        }
        Ok(())
    }
}

/// Ordinary least-squares line through `(phi, q)` points.
pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if !(sxx > 0.0) {
        return Err(Error::VerticalData);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss: f64 = points.iter().map(|&(x, y)| (y - (slope * x + intercept)).powi(2)).sum();
    Ok(LineFit { slope, intercept, rms_residual: (ss / nf).sqrt(), index_range: 0..n })
}

fn fit_curve_range(curve: &QPhiCurve, range: Range<usize>) -> Result<LineFit> {
    let pts: Vec<(f64, f64)> = curve.points[range.clone()].iter().map(|p| (p.phi, p.q)).collect();
    let mut fit = fit_line(&pts)?;
    fit.index_range = range;
    Ok(fit)
}

/// Intersection `(phi, q)` of the rise and plateau lines.
pub fn intersect_lines(rise: &LineFit, plateau: &LineFit) -> Result<(f64, f64)> {
    let ds = rise.slope - plateau.slope;
    if !(ds.abs() > PARALLEL_TOLERANCE * rise.slope.abs()) {
        return Err(Error::NoIntersection { rise: rise.slope, plateau: plateau.slope });
    }
    let phi = (plateau.intercept - rise.intercept) / ds;
    Ok((phi, plateau.eval(phi)))
}

/// Least-squares slope of `q` against `phi` over a flux window around each point.
///
/// The window spans `width` in flux and is shifted inwards at both ends of
/// the curve so that every point sees a full-width window. Windows always
/// hold at least two points. Entries are NaN where the window has no flux
/// spread.
pub fn local_slopes(curve: &QPhiCurve, width: f64) -> Vec<f64> {
    let n = curve.len();
    if n < 2 {
        return vec![f64::NAN; n];
    }
    let phi = curve.phi();
    let q = curve.q();
    let (x0, y0) = (phi[0], q[0]);
    let lo_phi = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_phi = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half = 0.5 * width;

    // prefix sums of shifted values
    let mut sx = vec![0.0; n + 1];
    let mut sy = vec![0.0; n + 1];
    let mut sxx = vec![0.0; n + 1];
    let mut sxy = vec![0.0; n + 1];
    for k in 0..n {
        let (x, y) = (phi[k] - x0, q[k] - y0);
        sx[k + 1] = sx[k] + x;
        sy[k + 1] = sy[k] + y;
        sxx[k + 1] = sxx[k] + x * x;
        sxy[k + 1] = sxy[k] + x * y;
    }

    let monotone = phi.windows(2).all(|w| w[1] >= w[0]);
    (0..n)
        .map(|k| {
            let center = if hi_phi - lo_phi > width {
                phi[k].clamp(lo_phi + half, hi_phi - half)
            } else {
                0.5 * (lo_phi + hi_phi)
            };
            let (a, b) = (center - half, center + half);
            let (mut lo, mut hi) = if monotone {
                (phi.partition_point(|&p| p < a), phi.partition_point(|&p| p <= b))
            } else {
                let mut lo = k;
                while lo > 0 && (a..=b).contains(&phi[lo - 1]) {
                    lo -= 1;
                }
                let mut hi = k + 1;
                while hi < n && (a..=b).contains(&phi[hi]) {
                    hi += 1;
                }
                (lo, hi)
            };
            lo = lo.min(k);
            hi = hi.max(k + 1);
            if hi - lo < 2 {
                if lo > 0 {
                    lo -= 1;
                } else {
                    hi += 1;
                }
            }
            let m = (hi - lo) as f64;
            let mx = (sx[hi] - sx[lo]) / m;
            let my = (sy[hi] - sy[lo]) / m;
            let var = (sxx[hi] - sxx[lo]) / m - mx * mx;
            let cov = (sxy[hi] - sxy[lo]) / m - mx * my;
            if var > f64::EPSILON * (hi_phi - lo_phi).powi(2) {
                cov / var
            } else {
                f64::NAN
            }
        })
        .collect()
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 0 { 0.5 * (values[mid - 1] + values[mid]) } else { values[mid] })
}

/// Maximal runs of low-slope points, before backward extension.
fn low_slope_runs(curve: &QPhiCurve, config: &ExtractionConfig) -> Vec<Range<usize>> {
    let n = curve.len();
    if n < 2 {
        return Vec::new();
    }
    let span = curve.max_phi() - curve.points.iter().map(|p| p.phi).fold(f64::INFINITY, f64::min);
    let slopes = local_slopes(curve, config.slope_window_fraction * span);
    let Some(peak) = slopes.iter().copied().filter(|s| s.is_finite()).reduce(f64::max) else {
        return Vec::new();
    };
    // the rising points lie between the leading flat run and the first drop
    let rough = runs_below(&slopes, config.plateau_slope_fraction * peak.max(0.0));
    let rise_start = rough.first().filter(|r| r.start == 0).map_or(0, |r| r.end);
    let rise_end = rough.iter().find(|r| r.start > 0).map_or(n, |r| r.start);
    let mut rising: Vec<f64> = slopes[rise_start..rise_end].iter().copied().filter(|s| s.is_finite()).collect();
    let reference = median(&mut rising).unwrap_or(peak);
    runs_below(&slopes, config.plateau_slope_fraction * reference.max(0.0))
}

fn runs_below(slopes: &[f64], threshold: f64) -> Vec<Range<usize>> {
    let n = slopes.len();
    let mut runs = Vec::new();
    let mut start = None;
    for (k, s) in slopes.iter().enumerate() {
        let low = s.is_finite() && *s <= threshold;
        match (low, start) {
            (true, None) => start = Some(k),
            (false, Some(s0)) => {
                runs.push(s0..k);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s0) = start {
        runs.push(s0..n);
    }
    runs
}

/// Moves the start of `run` backwards over points consistent with its line fit.
fn extend_backwards(curve: &QPhiCurve, run: Range<usize>, floor_index: usize) -> Range<usize> {
    let Ok(fit) = fit_curve_range(curve, run.clone()) else {
        return run;
    };
    let (qmin, qmax) = curve
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.q), hi.max(p.q)));
    let tol = (EXTEND_SIGMAS * fit.rms_residual).max(EXTEND_FLOOR * (qmax - qmin));
    let mut start = run.start;
    let mut misses = 0;
    for j in (floor_index..run.start).rev() {
        let p = curve.points[j];
        if (p.q - fit.eval(p.phi)).abs() <= tol {
            start = j;
            misses = 0;
        } else {
            misses += 1;
            if misses >= EXTEND_MISSES {
                break;
            }
        }
    }
    start..run.end
}

/// Every plateau (current step) of the curve, in order of increasing index.
///
/// A step must be preceded by rising points, so a low-slope run starting at
/// the first point is not reported. Each range has at least
/// `plateau_min_points` points. Multi-step resets yield two or more ranges.
pub fn detect_substeps(curve: &QPhiCurve, config: &ExtractionConfig) -> Result<Vec<Range<usize>>> {
    config.validate()?;
    let mut steps: Vec<Range<usize>> = Vec::new();
    for run in low_slope_runs(curve, config) {
        if run.start == 0 {
            continue;
        }
        let floor = steps.last().map_or(MIN_RISE_POINTS, |prev| prev.end).max(MIN_RISE_POINTS);
        let step = extend_backwards(curve, run, floor);
        if step.start >= floor && step.len() >= config.plateau_min_points {
            steps.push(step);
        }
    }
    Ok(drop_level_steps(curve, steps))
}

/// Removes steps that do not rise clearly above the level before them: a
/// first step at the starting charge is dropped, a later one at the level of
/// its predecessor is merged into it. Clearly means more than
/// `EXTEND_SIGMAS` times the larger residual rms of the two line fits.
fn drop_level_steps(curve: &QPhiCurve, steps: Vec<Range<usize>>) -> Vec<Range<usize>> {
    let (qmin, qmax) = curve
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.q), hi.max(p.q)));
    let floor = EXTEND_FLOOR * (qmax - qmin);
    let mut kept: Vec<Range<usize>> = Vec::with_capacity(steps.len());
    for step in steps {
        let Ok(fit) = fit_curve_range(curve, step.clone()) else {
            kept.push(step);
            continue;
        };
        let edge = curve.points[step.start].phi;
        match kept.last_mut() {
            None => {
                let rise = fit.eval(edge) - curve.points[0].q;
                if rise > EXTEND_SIGMAS * fit.rms_residual + floor {
                    kept.push(step);
                }
            }
            Some(prev) => {
                let level = fit_curve_range(curve, prev.clone()).map(|f| (f.eval(edge), f.rms_residual));
                match level {
                    Ok((q, rms)) if fit.eval(edge) - q <= EXTEND_SIGMAS * rms.max(fit.rms_residual) + floor => {
                        prev.end = step.end;
                    }
                    _ => kept.push(step),
                }
            }
        }
    }
    kept
}

/// The trailing plateau: the low-slope run that ends at the last point.
pub fn detect_plateau(curve: &QPhiCurve, config: &ExtractionConfig) -> Result<Range<usize>> {
    config.validate()?;
    let n = curve.len();
    if n < config.plateau_min_points + MIN_RISE_POINTS {
        return Err(Error::NoPlateau(format!(
            "curve has {n} points, need at least {}",
            config.plateau_min_points + MIN_RISE_POINTS
        )));
    }
    let runs = low_slope_runs(curve, config);
    let previous_end = match runs.as_slice() {
        [.., prev, _] => prev.end,
        _ => 0,
    };
    let trailing = runs
        .last()
        .filter(|r| r.end == n)
        .cloned()
        .ok_or_else(|| Error::NoPlateau("charge keeps rising until the end of the sweep".into()))?;
    let extended = extend_backwards(curve, trailing, previous_end.max(MIN_RISE_POINTS));
    let plateau = extended.start.max(MIN_RISE_POINTS)..n;
    if plateau.len() < config.plateau_min_points {
        return Err(Error::NoPlateau(format!(
            "trailing flat run has {} points, need {}",
            plateau.len(),
            config.plateau_min_points
        )));
    }
    Ok(plateau)
}

/// The trailing `rise_window_fraction` of the points before `plateau_start`.
pub fn select_rise_window(plateau_start: usize, config: &ExtractionConfig) -> Result<Range<usize>> {
    if plateau_start < MIN_RISE_POINTS {
        return Err(Error::TooFewRisePoints(plateau_start));
    }
    let count = ((config.rise_window_fraction * plateau_start as f64).round() as usize)
        .clamp(MIN_RISE_POINTS, plateau_start);
    Ok(plateau_start - count..plateau_start)
}

/// Linear interpolation of voltage and current at time `t`.
pub fn recover_voltage_current(trace: &SweepTrace, t: f64) -> Result<(f64, f64)> {
    let (start, end) = trace.time_span().ok_or(Error::InvalidTrace("empty trace".into()))?;
    if !(start..=end).contains(&t) {
        return Err(Error::TimeOutOfRange { t, start, end });
    }
    let s = &trace.samples;
    let k = s.partition_point(|x| x.t <= t) - 1;
    if k + 1 == s.len() {
        return Ok((s[k].v, s[k].i));
    }
    let frac = (t - s[k].t) / (s[k + 1].t - s[k].t);
    Ok((s[k].v + frac * (s[k + 1].v - s[k].v), s[k].i + frac * (s[k + 1].i - s[k].i)))
}

/// Reset point together with every detected current step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub reset: ResetPoint,
    pub substeps: Vec<Range<usize>>,
}

impl Extraction {
    pub fn is_multi_step(&self) -> bool {
        self.substeps.len() >= 2
    }
}

pub fn extract_reset_point(curve: &QPhiCurve, trace: &SweepTrace, config: &ExtractionConfig) -> Result<ResetPoint> {
    extract(curve, trace, config).map(|e| e.reset)
}

/// Full extraction for one cycle. The first current step is used as the
/// plateau, so multi-step curves are characterized by their first reset event.
pub fn extract(curve: &QPhiCurve, trace: &SweepTrace, config: &ExtractionConfig) -> Result<Extraction> {
    config.validate()?;
    let substeps = detect_substeps(curve, config)?;
    let plateau = match substeps.first() {
        Some(first) => first.clone(),
        None => detect_plateau(curve, config)?,
    };
    let rise = select_rise_window(plateau.start, config)?;
    let rise_fit = fit_curve_range(curve, rise)?;
    let plateau_fit = fit_curve_range(curve, plateau)?;

    let (qmin, qmax, pmin, pmax) = curve.points.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p.q), b.max(p.q), c.min(p.phi), d.max(p.phi)),
    );
    // floor at rounding level so a flat curve is not rejected for round-off
    let limit = (config.max_rms_fraction * (qmax - qmin)).max(1e-12 * qmax.abs().max(qmin.abs()));
    for (which, fit) in [("rise", &rise_fit), ("plateau", &plateau_fit)] {
        if fit.rms_residual > limit {
            return Err(Error::PoorFit { which, rms: fit.rms_residual, limit });
        }
    }

    let (phi_rst, q_rst) = intersect_lines(&rise_fit, &plateau_fit)?;
    if !(phi_rst > 0.0 && q_rst > 0.0 && phi_rst >= pmin && phi_rst <= pmax) {
        return Err(Error::ImplausibleReset { phi: phi_rst, q: q_rst, min: pmin, max: pmax });
    }
    let t_rst = phi_to_time(curve, trace, phi_rst)?;
    let (v_rst, i_rst) = recover_voltage_current(trace, t_rst)?;
    Ok(Extraction { reset: ResetPoint { phi_rst, q_rst, v_rst, i_rst, t_rst, rise_fit, plateau_fit }, substeps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFitReport {
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
    pub index_range: [usize; 2],
}

impl From<&LineFit> for LineFitReport {
    fn from(fit: &LineFit) -> Self {
        Self {
            slope: fit.slope,
            intercept: fit.intercept,
            rms_residual: fit.rms_residual,
            index_range: [fit.index_range.start, fit.index_range.end],
        }
    }
}

/// Per-cycle JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle_id: u64,
    pub phi_rst: f64,
    pub q_rst: f64,
    pub v_rst: f64,
    pub i_rst: f64,
    pub t_rst: f64,
    pub rise_fit: LineFitReport,
    pub plateau_fit: LineFitReport,
    pub substep_count: usize,
}

impl CycleReport {
    pub fn new(cycle_id: u64, extraction: &Extraction) -> Self {
        let r = &extraction.reset;
        Self {
            cycle_id,
            phi_rst: r.phi_rst,
            q_rst: r.q_rst,
            v_rst: r.v_rst,
            i_rst: r.i_rst,
            t_rst: r.t_rst,
            rise_fit: (&r.rise_fit).into(),
            plateau_fit: (&r.plateau_fit).into(),
            substep_count: extraction.substeps.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qphi::QPhiPoint;
    use crate::trace::SweepSample;
    use approx::assert_relative_eq;

    fn curve_from(f: impl Fn(f64) -> f64, phis: impl IntoIterator<Item = f64>) -> QPhiCurve {
        let points = phis
            .into_iter()
            .enumerate()
            .map(|(k, phi)| QPhiPoint { phi, q: f(phi), sample_index: k })
            .collect();
        QPhiCurve { points, source_cycle_id: 0 }
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    fn two_segment(phi: f64) -> f64 {
        (0.2 * phi).min(0.6)
    }

    /// Solves the 2x2 normal equations directly.
    fn normal_equations(points: &[(f64, f64)]) -> (f64, f64, f64) {
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        let slope = (n * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        let ss: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
        (slope, intercept, (ss / n).sqrt())
    }

    #[test]
    fn fit_exact_line() {
        let pts: Vec<_> = (0..10).map(|k| (k as f64 * 0.3, 2.0 * k as f64 * 0.3 + 1.0)).collect();
        let fit = fit_line(&pts).unwrap();
        assert_relative_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 1.0, epsilon = 1e-12);
        assert!(fit.rms_residual < 1e-12);

        let fit = fit_line(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert_eq!((fit.slope, fit.intercept), (1.0, 0.0));
    }

    #[test]
    fn fit_three_points_matches_normal_equations() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)];
        let (slope, intercept, rms) = normal_equations(&pts);
        let fit = fit_line(&pts).unwrap();
        assert_relative_eq!(fit.slope, slope, epsilon = 1e-15);
        assert_relative_eq!(fit.intercept, intercept, epsilon = 1e-15);
        assert_relative_eq!(fit.rms_residual, rms, epsilon = 1e-15);
        assert_relative_eq!(fit.intercept, 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(fit.rms_residual, (2.0f64 / 9.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        assert_eq!(fit_line(&[(1.0, 1.0)]).unwrap_err(), Error::TooFewPoints(1));
        assert_eq!(fit_line(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).unwrap_err(), Error::VerticalData);
    }

    #[test]
    fn plateau_of_two_segment_curve() {
        let curve = curve_from(two_segment, grid(0.0, 5.0, 501));
        let range = detect_plateau(&curve, &ExtractionConfig::default()).unwrap();
        // points are 0.01 apart; the corner sits at index 300
        assert_eq!(range, 300..501);
    }

    #[test]
    fn linear_curve_has_no_plateau() {
        let curve = curve_from(|p| p, grid(0.0, 5.0, 200));
        let err = detect_plateau(&curve, &ExtractionConfig::default()).unwrap_err();
        assert!(err.to_string().contains("no plateau"));
        assert!(detect_substeps(&curve, &ExtractionConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn constant_curve_plateau_then_rise_fit_fails() {
        let curve = curve_from(|_| 0.6, grid(0.0, 5.0, 50));
        assert_eq!(detect_plateau(&curve, &ExtractionConfig::default()).unwrap(), 2..50);
        let samples = (0..50).map(|k| SweepSample::new(k as f64, 0.1, 0.0)).collect();
        let trace = SweepTrace::new(0, samples).unwrap();
        let err = extract_reset_point(&curve, &trace, &ExtractionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoIntersection { .. } | Error::ImplausibleReset { .. }), "{err:?}");
    }

    #[test]
    fn short_curve_is_rejected() {
        let curve = curve_from(two_segment, grid(0.0, 5.0, 6));
        assert!(matches!(detect_plateau(&curve, &ExtractionConfig::default()), Err(Error::NoPlateau(_))));
    }

    #[test]
    fn rise_window_counts() {
        let c = ExtractionConfig { rise_window_fraction: 0.25, ..Default::default() };
        assert_eq!(select_rise_window(100, &c).unwrap(), 75..100);
        assert_eq!(select_rise_window(4, &c).unwrap(), 2..4);
        assert_eq!(select_rise_window(1, &c).unwrap_err(), Error::TooFewRisePoints(1));
    }

    #[test]
    fn parallel_lines_do_not_intersect() {
        let a = LineFit { slope: 0.2, intercept: 0.0, rms_residual: 0.0, index_range: 0..2 };
        let b = LineFit { intercept: 0.6, ..a.clone() };
        assert!(matches!(intersect_lines(&a, &b), Err(Error::NoIntersection { .. })));
        let zero = LineFit { slope: 0.0, ..a.clone() };
        assert!(matches!(intersect_lines(&zero, &zero), Err(Error::NoIntersection { .. })));
        let flat = LineFit { slope: 0.0, intercept: 0.6, ..a.clone() };
        let (phi, q) = intersect_lines(&a, &flat).unwrap();
        assert_relative_eq!(phi, 3.0, epsilon = 1e-12);
        assert_relative_eq!(q, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn two_segment_reset_point() {
        // Drive v = 1 V so that phi = t and q = i integrated.
        let phis = grid(0.0, 5.0, 501);
        let samples: Vec<_> = phis
            .iter()
            .map(|&t| SweepSample::new(t, 1.0, if t < 3.0 { 0.2 } else { 0.0 }))
            .collect();
        let trace = SweepTrace::new(0, samples).unwrap();
        let curve = curve_from(two_segment, phis);
        let reset = extract_reset_point(&curve, &trace, &ExtractionConfig::default()).unwrap();
        assert_relative_eq!(reset.phi_rst, 3.0, max_relative = 1e-9);
        assert_relative_eq!(reset.q_rst, 0.6, max_relative = 1e-9);
        assert_relative_eq!(reset.t_rst, 3.0, max_relative = 1e-9);
        assert_relative_eq!(reset.v_rst, 1.0);
        let rise_q = reset.rise_fit.eval(reset.phi_rst);
        assert_relative_eq!(rise_q, reset.q_rst, max_relative = 1e-9);
    }

    #[test]
    fn staircase_has_two_steps_and_first_is_used() {
        // slope 0.2 to phi = 3, flat to 4, slope 0.1 to 6, flat to 8
        let stair = |p: f64| {
            if p < 3.0 {
                0.2 * p
            } else if p < 4.0 {
                0.6
            } else if p < 6.0 {
                0.6 + 0.1 * (p - 4.0)
            } else {
                0.8
            }
        };
        let curve = curve_from(stair, grid(0.0, 8.0, 801));
        let steps = detect_substeps(&curve, &ExtractionConfig::default()).unwrap();
        assert_eq!(steps.len(), 2, "{steps:?}");
        assert_eq!(steps[0].start, 300);
        assert_eq!(steps[1].start, 600);
        assert!(steps[0].end <= steps[1].start);

        let single = curve_from(two_segment, grid(0.0, 5.0, 501));
        assert_eq!(detect_substeps(&single, &ExtractionConfig::default()).unwrap().len(), 1);
        let rising = curve_from(|p| p * p, grid(0.0, 5.0, 501));
        assert!(detect_substeps(&rising, &ExtractionConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn recover_interpolates() {
        let samples: Vec<_> = (0..=300).map(|k| {
            let t = k as f64 * 0.01;
            SweepSample::new(t, t, 2.0 * t)
        }).collect();
        let trace = SweepTrace::new(0, samples).unwrap();
        let (v, i) = recover_voltage_current(&trace, 1.98).unwrap();
        assert_relative_eq!(v, 1.98, max_relative = 1e-12);
        assert_relative_eq!(i, 3.96, max_relative = 1e-12);
        let knot = trace.samples[37];
        assert_eq!(recover_voltage_current(&trace, knot.t).unwrap(), (knot.v, knot.i));
        assert_eq!(recover_voltage_current(&trace, 3.0).unwrap(), (3.0, 6.0));
        assert!(matches!(recover_voltage_current(&trace, 3.5), Err(Error::TimeOutOfRange { .. })));

        let trace = SweepTrace::new(
            0,
            vec![
                SweepSample::new(0.0, 1.0, 0.0),
                SweepSample::new(1.0, 2.0, 0.0),
                SweepSample::new(2.0, 2.0, 0.0),
                SweepSample::new(3.0, 2.0, 0.0),
            ],
        )
        .unwrap();
        assert_eq!(recover_voltage_current(&trace, 0.5).unwrap().0, 1.5);
    }

    #[test]
    fn config_validation() {
        assert!(ExtractionConfig::default().validate().is_ok());
        let bad = ExtractionConfig { plateau_slope_fraction: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExtractionConfig { plateau_min_points: 1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn local_slopes_on_a_line() {
        let curve = curve_from(|p| 3.0 * p - 1.0, grid(0.0, 2.0, 41));
        for s in local_slopes(&curve, 0.2) {
            assert_relative_eq!(s, 3.0, max_relative = 1e-9);
        }
        // a zero-width window still uses two points
        for s in local_slopes(&curve, 0.0) {
            assert_relative_eq!(s, 3.0, max_relative = 1e-9);
        }
    }
}
