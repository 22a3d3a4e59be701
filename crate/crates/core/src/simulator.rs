//! Forward synthesis of reset sweeps from model parameters.
//!
//! The device is a voltage-controlled memductor: flux accumulates from the
//! drive voltage and the current is `W(φ)·v`, with `W` the model
//! memductance. Once the flux reaches `phi_rst` the current drops to zero.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{memductance, model_charge, ModelParams};
use crate::trace::{CycleSet, SweepSample, SweepTrace};
use crate::variability::{sample_parameters, stream_rng, EnsembleRecord, ParameterDistribution, ParameterEnsemble};

/// Seed offset separating measurement-noise streams from parameter streams.
const NOISE_KEY: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    /// `v = rate · t`.
    Ramp { rate: f64, duration: f64 },
    /// `v = amplitude · sin(2π · frequency · t)`.
    Sine { amplitude: f64, frequency: f64, duration: f64 },
    /// Linear interpolation between `(t, v)` breakpoints, holding the end
    /// values outside them.
    PiecewiseLinear { breakpoints: Vec<(f64, f64)>, duration: f64 },
}

impl Waveform {
    pub fn duration(&self) -> f64 {
        match self {
            Self::Ramp { duration, .. } | Self::Sine { duration, .. } | Self::PiecewiseLinear { duration, .. } => {
                *duration
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let duration = self.duration();
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidWaveform(format!("duration must be positive, got {duration}")));
        }
        match self {
            Self::Ramp { rate, .. } if !rate.is_finite() => {
                Err(Error::InvalidWaveform(format!("ramp rate must be finite, got {rate}")))
            }
            Self::Sine { amplitude, frequency, .. } if !(amplitude.is_finite() && frequency.is_finite()) => {
                Err(Error::InvalidWaveform("sine amplitude and frequency must be finite".into()))
            }
            Self::PiecewiseLinear { breakpoints, .. } => {
                if breakpoints.is_empty() {
                    return Err(Error::InvalidWaveform("piecewise-linear waveform needs breakpoints".into()));
                }
                if breakpoints.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                    return Err(Error::InvalidWaveform("breakpoints must be finite".into()));
                }
                if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidWaveform("breakpoint times must be strictly increasing".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Drive voltage at time `t`.
    pub fn voltage(&self, t: f64) -> f64 {
        match self {
            Self::Ramp { rate, .. } => rate * t,
            Self::Sine { amplitude, frequency, .. } => {
                let s = (2.0 * std::f64::consts::PI * frequency * t).sin();
                // sin(kπ) rounds to about 1e-16 rather than zero
                if s.abs() < 1e-12 { 0.0 } else { amplitude * s }
            }
            Self::PiecewiseLinear { breakpoints, .. } => {
                let k = breakpoints.partition_point(|&(bt, _)| bt <= t);
                if k == 0 {
                    return breakpoints[0].1;
                }
                if k == breakpoints.len() {
                    return breakpoints[k - 1].1;
                }
                let ((t0, v0), (t1, v1)) = (breakpoints[k - 1], breakpoints[k]);
                v0 + (t - t0) / (t1 - t0) * (v1 - v0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Timestep in seconds.
    pub dt: f64,
    /// Standard deviation of the charge noise, relative to `q_rst`.
    pub noise_sigma_q: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1e-3, noise_sigma_q: 0.0, seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.noise_sigma_q >= 0.0 && self.noise_sigma_q.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sigma_q must be >= 0, got {}", self.noise_sigma_q)));
        }
        Ok(())
    }
}

/// Samples the waveform at `0, dt, 2dt, …` and at the final time `duration`.
pub fn generate_waveform(waveform: &Waveform, dt: f64) -> Result<Vec<(f64, f64)>> {
    waveform.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let duration = waveform.duration();
    let steps = duration / dt;
    if steps > 1e9 {
        return Err(Error::InvalidConfig(format!("{steps:.3e} samples requested")));
    }
    let mut out = Vec::with_capacity(steps as usize + 2);
    let mut k = 0u64;
    loop {
        let t = k as f64 * dt;
        // a grid point within a rounding error of the end is the end
        if t >= duration - 1e-9 * dt {
            break;
        }
        out.push((t, waveform.voltage(t)));
        k += 1;
    }
    out.push((duration, waveform.voltage(duration)));
    Ok(out)
}

/// Synthesizes one reset sweep.
///
/// Flux is accumulated by the trapezoid rule and the current is
/// `memductance(φ)·v`. Near the corner the pre-reset current is capped so
/// that the trapezoid charge of the emitted current never exceeds `q_rst`;
/// past `phi_rst` the current is exactly zero. With `noise_sigma_q > 0` the
/// current receives the time derivative of a white charge-noise sequence,
/// so the integrated charge deviates from the noiseless one by Gaussian noise
/// of standard deviation `noise_sigma_q · q_rst` at every sample. The noise
/// stream is derived from `(config.seed, cycle_id)`.
pub fn simulate_reset_trace(waveform: &Waveform, params: &ModelParams, config: &SimConfig) -> Result<SweepTrace> {
    simulate_cycle(waveform, params, config, 0)
}

pub fn simulate_cycle(waveform: &Waveform, params: &ModelParams, config: &SimConfig, cycle_id: u64) -> Result<SweepTrace> {
    params.validate()?;
    config.validate()?;
    let drive = generate_waveform(waveform, config.dt)?;
    if let Some((index, &(_, v))) = drive.iter().enumerate().find(|(_, s)| s.1 < 0.0) {
        return Err(Error::NegativeVoltage { index, v });
    }
    let limit = params.phi_rst / 100.0;
    for (k, w) in drive.windows(2).enumerate() {
        let step = 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
        if step >= limit {
            return Err(Error::StepTooLarge { index: k + 1, step, limit });
        }
    }

    let n = drive.len();
    let mut current = vec![0.0; n];
    let mut phi = 0.0;
    let mut charge = 0.0;
    for k in 0..n {
        let (t, v) = drive[k];
        let dt_prev = if k > 0 { t - drive[k - 1].0 } else { 0.0 };
        if k > 0 {
            phi += 0.5 * dt_prev * (drive[k - 1].1 + v);
        }
        let mut i = if phi >= params.phi_rst || v == 0.0 {
            0.0
        } else {
            let mut w = memductance(phi, params)?;
            if !w.is_finite() {
                // singular slope at the origin: secant over the next flux step
                let next = drive.get(k + 1).map_or(phi, |&(t1, v1)| phi + 0.5 * (t1 - t) * (v + v1));
                w = if next > phi { model_charge(next, params)? / next } else { 0.0 };
            }
            w * v
        };
        if i > 0.0 {
            // this sample's current also enters the next step's trapezoid
            let dt_next = if k + 1 < n { drive[k + 1].0 - t } else { 0.0 };
            let before = charge + if k > 0 { 0.5 * dt_prev * current[k - 1] } else { 0.0 };
            let weight = 0.5 * (dt_prev + dt_next);
            if weight > 0.0 && before + weight * i > params.q_rst {
                i = ((params.q_rst - before) / weight).max(0.0);
            }
        }
        current[k] = i;
        if k > 0 {
            charge += 0.5 * dt_prev * (current[k - 1] + i);
        }
    }

    if config.noise_sigma_q > 0.0 {
        let mut rng = stream_rng(config.seed ^ NOISE_KEY, cycle_id);
        let sigma_e = std::f64::consts::SQRT_2 * config.noise_sigma_q * params.q_rst;
        let mut prev_e = 0.0;
        for k in 1..n {
            let e: f64 = sigma_e * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            current[k] += (e - prev_e) / (drive[k].0 - drive[k - 1].0);
            prev_e = e;
        }
    }

    let samples = drive.iter().zip(&current).map(|(&(t, v), &i)| SweepSample { t, v, i }).collect();
    SweepTrace::new(cycle_id, samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedEnsemble {
    pub cycles: CycleSet,
    /// The parameters each cycle was generated from, in cycle order.
    pub parameters: ParameterEnsemble,
}

/// Samples `count` parameter triples and simulates one cycle per triple.
/// Cycle ids run from 0; output order does not depend on scheduling.
pub fn simulate_ensemble(
    dist: &ParameterDistribution,
    count: usize,
    waveform: &Waveform,
    config: &SimConfig,
) -> Result<SimulatedEnsemble> {
    let (parameters, traces) = simulate_ensemble_map(dist, count, waveform, config, |trace, _| trace)?;
    let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SimulatedEnsemble { cycles: CycleSet::new(traces, format!("simulated:seed={}", config.seed))?, parameters })
}

/// Like [`simulate_ensemble`], but hands each simulated trace to `f` instead
/// of keeping it, so large ensembles can be reduced without holding every
/// trace in memory. Results are in cycle order.
pub fn simulate_ensemble_map<T, F>(
    dist: &ParameterDistribution,
    count: usize,
    waveform: &Waveform,
    config: &SimConfig,
    f: F,
) -> Result<(ParameterEnsemble, Vec<Result<T>>)>
where
    T: Send,
    F: Fn(SweepTrace, &EnsembleRecord) -> T + Sync,
{
    config.validate()?;
    waveform.validate()?;
    let parameters = sample_parameters(dist, count, config.seed)?;
    let results = parameters
        .records
        .par_iter()
        .map(|r| simulate_cycle(waveform, &r.params, config, r.cycle_id).map(|trace| f(trace, r)))
        .collect();
    Ok((parameters, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::model_charge;
    use crate::qphi::integrate_trace;
    use approx::assert_relative_eq;

    const TAB2: ModelParams = ModelParams { q_rst: 562e-6, phi_rst: 3.28, n: 1.50 };

    #[test]
    fn waveform_samples() {
        let ramp = generate_waveform(&Waveform::Ramp { rate: 1.0, duration: 2.0 }, 1.0).unwrap();
        assert_eq!(ramp, vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);

        let f = 5.0;
        let sine = Waveform::Sine { amplitude: 1.0, frequency: f, duration: 1.0 / (4.0 * f) };
        let s = generate_waveform(&sine, 1.0 / (40.0 * f)).unwrap();
        assert_relative_eq!(s.last().unwrap().1, 1.0, epsilon = 1e-15);
        assert_eq!(s.len(), 11);

        let pwl = Waveform::PiecewiseLinear { breakpoints: vec![(0.0, 0.0), (1.0, 2.0), (2.0, 0.0)], duration: 2.0 };
        let v: Vec<f64> = generate_waveform(&pwl, 0.5).unwrap().iter().map(|s| s.1).collect();
        assert_eq!(v, vec![0.0, 1.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn endpoint_included_off_grid() {
        let w = generate_waveform(&Waveform::Ramp { rate: 1.0, duration: 1.05 }, 0.1).unwrap();
        assert_eq!(w.len(), 12);
        assert_eq!(w.last().unwrap().0, 1.05);
    }

    #[test]
    fn invalid_waveforms() {
        assert!(Waveform::Ramp { rate: 1.0, duration: 0.0 }.validate().is_err());
        let unsorted = Waveform::PiecewiseLinear { breakpoints: vec![(1.0, 0.0), (0.5, 1.0)], duration: 2.0 };
        assert!(unsorted.validate().is_err());
        let empty = Waveform::PiecewiseLinear { breakpoints: vec![], duration: 2.0 };
        assert!(empty.validate().is_err());
        assert!(generate_waveform(&Waveform::Ramp { rate: 1.0, duration: 1.0 }, 0.0).is_err());
    }

    #[test]
    fn ohmic_ramp_closed_form() {
        let params = ModelParams { q_rst: 1e-3, phi_rst: 2.0, n: 1.0 };
        let w = Waveform::Ramp { rate: 1.0, duration: 3.0 };
        let trace = simulate_reset_trace(&w, &params, &SimConfig { dt: 1e-3, ..Default::default() }).unwrap();
        // phi = t²/2 reaches 2 at t = 2
        for s in &trace.samples {
            if s.t < 1.99 {
                assert_relative_eq!(s.i, 1e-3 / 2.0 * s.t, max_relative = 1e-9);
            } else if s.t > 2.0 + 1e-9 {
                assert_eq!(s.i, 0.0);
            }
        }
    }

    #[test]
    fn round_trip_charge_with_tab2_means() {
        let w = Waveform::Ramp { rate: 1.0, duration: 4.0 };
        let trace = simulate_reset_trace(&w, &TAB2, &SimConfig { dt: 1e-3, ..Default::default() }).unwrap();
        let curve = integrate_trace(&trace).unwrap();
        let last = curve.points.last().unwrap().q;
        assert!((last - 562e-6).abs() / 562e-6 < 0.005, "{last}");
        assert!(curve.points.iter().all(|p| p.q <= TAB2.q_rst));
    }

    #[test]
    fn noiseless_is_seed_independent() {
        let w = Waveform::Ramp { rate: 1.0, duration: 3.0 };
        let a = simulate_reset_trace(&w, &TAB2, &SimConfig { dt: 1e-3, noise_sigma_q: 0.0, seed: 1 }).unwrap();
        let b = simulate_reset_trace(&w, &TAB2, &SimConfig { dt: 1e-3, noise_sigma_q: 0.0, seed: 1 }).unwrap();
        let c = simulate_reset_trace(&w, &TAB2, &SimConfig { dt: 1e-3, noise_sigma_q: 0.0, seed: 2 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn zero_amplitude_gives_zero_current() {
        let w = Waveform::Sine { amplitude: 0.0, frequency: 1.0, duration: 0.4 };
        let trace = simulate_reset_trace(&w, &TAB2, &SimConfig::default()).unwrap();
        assert!(trace.samples.iter().all(|s| s.i == 0.0));
        let curve = integrate_trace(&trace).unwrap();
        assert_eq!(curve.points.last().unwrap().q, 0.0);
    }

    #[test]
    fn rejects_negative_voltage_and_coarse_steps() {
        let sine = Waveform::Sine { amplitude: 1.0, frequency: 1.0, duration: 0.9 };
        assert!(matches!(
            simulate_reset_trace(&sine, &TAB2, &SimConfig::default()),
            Err(Error::NegativeVoltage { .. })
        ));
        let ramp = Waveform::Ramp { rate: 1.0, duration: 4.0 };
        assert!(matches!(
            simulate_reset_trace(&ramp, &TAB2, &SimConfig { dt: 0.5, ..Default::default() }),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn noise_has_requested_charge_spread() {
        let w = Waveform::Ramp { rate: 1.0, duration: 4.0 };
        let clean = simulate_reset_trace(&w, &TAB2, &SimConfig { dt: 1e-3, ..Default::default() }).unwrap();
        let noisy =
            simulate_reset_trace(&w, &TAB2, &SimConfig { dt: 1e-3, noise_sigma_q: 0.01, seed: 3 }).unwrap();
        let qc = integrate_trace(&clean).unwrap().q();
        let qn = integrate_trace(&noisy).unwrap().q();
        let diffs: Vec<f64> = qc.iter().zip(&qn).skip(1).map(|(a, b)| (b - a) / TAB2.q_rst).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!(mean.abs() < 1e-3, "{mean}");
        assert!((sd - 0.01).abs() < 0.001, "{sd}");
    }

    #[test]
    fn single_member_ensemble_matches_direct_simulation() {
        let dist = ParameterDistribution::independent(TAB2, ModelParams { q_rst: 0.0, phi_rst: 0.0, n: 0.0 });
        let w = Waveform::Ramp { rate: 1.0, duration: 3.0 };
        let config = SimConfig { dt: 1e-3, noise_sigma_q: 0.0, seed: 9 };
        let ens = simulate_ensemble(&dist, 1, &w, &config).unwrap();
        assert_eq!(ens.cycles.traces[0], simulate_reset_trace(&w, &TAB2, &config).unwrap());
        assert_eq!(ens.parameters.records[0].params, TAB2);
    }

    #[test]
    fn ensemble_is_reproducible() {
        let std = ModelParams { q_rst: 100e-6, phi_rst: 0.3, n: 0.1 };
        let dist = ParameterDistribution::independent(TAB2, std);
        let w = Waveform::Ramp { rate: 1.0, duration: 4.0 };
        let config = SimConfig { dt: 1e-3, noise_sigma_q: 0.01, seed: 5 };
        let a = simulate_ensemble(&dist, 6, &w, &config).unwrap();
        let b = simulate_ensemble(&dist, 6, &w, &config).unwrap();
        assert_eq!(a, b);
        let ids: Vec<u64> = a.cycles.traces.iter().map(|t| t.cycle_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn charge_tracks_model() {
        let w = Waveform::Ramp { rate: 1.0, duration: 3.5 };
        let trace = simulate_reset_trace(&w, &TAB2, &SimConfig { dt: 1e-3, ..Default::default() }).unwrap();
        let curve = integrate_trace(&trace).unwrap();
        for p in curve.points.iter().skip(1) {
            let model = model_charge(p.phi, &TAB2).unwrap();
            assert!((p.q - model).abs() <= 0.005 * TAB2.q_rst, "phi {} q {} model {}", p.phi, p.q, model);
        }
    }
}
