//! Flat `key = value` run configuration.
//!
//! Keys mirror the core config field names. Values come from built-in
//! defaults, then the config file, then `--set` overrides, then `--seed`.

use std::collections::BTreeMap;

use qphi_core::extraction::ExtractionConfig;
use qphi_core::model::{ModelParams, DEFAULT_FIT_RANGE};
use qphi_core::simulator::{SimConfig, Waveform};
use qphi_core::trace::FormatConfig;

use crate::error::CliError;

const DEFAULTS: &[(&str, &str)] = &[
    ("plateau_slope_fraction", "0.05"),
    ("plateau_min_points", "5"),
    ("rise_window_fraction", "0.05"),
    ("max_rms_fraction", "0.05"),
    ("slope_window_fraction", "0.02"),
    ("fit_lo", "0.1"),
    ("fit_hi", "0.95"),
    ("split_threshold_v", "none"),
    ("dt", "0.001"),
    ("noise_sigma_q", "0"),
    ("seed", "0"),
    ("q_rst", "5.62e-4"),
    ("phi_rst", "3.28"),
    ("n", "1.5"),
    ("q_rst_std", "2.55e-4"),
    ("phi_rst_std", "0.76"),
    ("n_std", "0.0999"),
    ("waveform", "ramp:rate=1,duration=5"),
    ("count", "100"),
];

/// Resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    /// Every key with its effective value.
    pub values: BTreeMap<String, String>,
    pub extraction: ExtractionConfig,
    pub fit_range: (f64, f64),
    pub split_threshold_v: Option<f64>,
    pub sim: SimConfig,
    pub params: ModelParams,
    pub spread: ModelParams,
    pub waveform: Waveform,
    pub count: usize,
}

impl Settings {
    pub fn format_config(&self, source: &str) -> FormatConfig {
        FormatConfig { source: source.to_string(), split_threshold_v: self.split_threshold_v }
    }
}

/// Parses a config file body into key/value pairs.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value, got {line:?}", k + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `--set key=value` argument.
pub fn parse_override(arg: &str) -> Result<(String, String), CliError> {
    let (key, value) =
        arg.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {arg:?}")))?;
    Ok((key.trim().to_string(), value.trim().to_string()))
}

pub fn resolve(
    file: &[(String, String)],
    overrides: &[(String, String)],
    seed: Option<u64>,
) -> Result<Settings, CliError> {
    let mut values: BTreeMap<String, String> = DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    for (key, value) in file.iter().chain(overrides) {
        match values.get_mut(key) {
            Some(slot) => *slot = value.clone(),
            None => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
    }
    if let Some(seed) = seed {
        values.insert("seed".into(), seed.to_string());
    }
    build(values)
}

fn build(values: BTreeMap<String, String>) -> Result<Settings, CliError> {
    let f = |key: &str| -> Result<f64, CliError> {
        let raw = &values[key];
        raw.parse::<f64>().map_err(|_| CliError::Usage(format!("{key}: expected a number, got {raw:?}")))
    };
    let u = |key: &str| -> Result<u64, CliError> {
        let raw = &values[key];
        raw.parse::<u64>().map_err(|_| CliError::Usage(format!("{key}: expected a non-negative integer, got {raw:?}")))
    };

    let extraction = ExtractionConfig {
        plateau_slope_fraction: f("plateau_slope_fraction")?,
        plateau_min_points: u("plateau_min_points")? as usize,
        rise_window_fraction: f("rise_window_fraction")?,
        max_rms_fraction: f("max_rms_fraction")?,
        slope_window_fraction: f("slope_window_fraction")?,
    };
    extraction.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let fit_range = (f("fit_lo")?, f("fit_hi")?);
    if !(fit_range.0 > 0.0 && fit_range.0 < fit_range.1 && fit_range.1 < 1.0) {
        return Err(CliError::Usage(format!(
            "fit range ({}, {}) must satisfy 0 < fit_lo < fit_hi < 1 (default {:?})",
            fit_range.0, fit_range.1, DEFAULT_FIT_RANGE
        )));
    }

    let split_threshold_v = match values["split_threshold_v"].as_str() {
        "none" | "" => None,
        _ => {
            let v = f("split_threshold_v")?;
            if !(v > 0.0) {
                return Err(CliError::Usage(format!("split_threshold_v must be positive, got {v}")));
            }
            Some(v)
        }
    };

    let sim = SimConfig { dt: f("dt")?, noise_sigma_q: f("noise_sigma_q")?, seed: u("seed")? };
    sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let params = ModelParams { q_rst: f("q_rst")?, phi_rst: f("phi_rst")?, n: f("n")? };
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let spread = ModelParams { q_rst: f("q_rst_std")?, phi_rst: f("phi_rst_std")?, n: f("n_std")? };
    if spread.as_array().iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(CliError::Usage("standard deviations must be finite and >= 0".into()));
    }

    let waveform = parse_waveform(&values["waveform"])?;
    let count = u("count")? as usize;

    Ok(Settings { values, extraction, fit_range, split_threshold_v, sim, params, spread, waveform, count })
}

/// Parses a waveform spec such as `ramp:rate=1,duration=5`,
/// `sine:amplitude=2,frequency=0.1,duration=2.5` or
/// `pwl:0=0,1=2,2=0,duration=2`. A piecewise-linear spec lists `t=v`
/// breakpoints; its duration defaults to the last breakpoint time.
pub fn parse_waveform(spec: &str) -> Result<Waveform, CliError> {
    let bad = |msg: String| CliError::Usage(format!("waveform {spec:?}: {msg}"));
    let (kind, rest) = spec.split_once(':').ok_or_else(|| bad("expected kind:key=value,...".into()))?;
    let mut fields = Vec::new();
    for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {item:?}")))?;
        let v: f64 = v.trim().parse().map_err(|_| bad(format!("{:?} is not a number", v.trim())))?;
        fields.push((k.trim(), v));
    }
    let take = |fields: &[(&str, f64)], key: &str| {
        fields.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).ok_or_else(|| bad(format!("missing {key}")))
    };
    let check_keys = |fields: &[(&str, f64)], allowed: &[&str]| {
        match fields.iter().find(|(k, _)| !allowed.contains(k)) {
            Some((k, _)) => Err(bad(format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    };
    let waveform = match kind.trim() {
        "ramp" => {
            check_keys(&fields, &["rate", "duration"])?;
            Waveform::Ramp { rate: take(&fields, "rate")?, duration: take(&fields, "duration")? }
        }
        "sine" => {
            check_keys(&fields, &["amplitude", "frequency", "duration"])?;
            Waveform::Sine {
                amplitude: take(&fields, "amplitude")?,
                frequency: take(&fields, "frequency")?,
                duration: take(&fields, "duration")?,
            }
        }
        "pwl" => {
            let mut breakpoints = Vec::new();
            let mut duration = None;
            for (k, v) in &fields {
                if *k == "duration" {
                    duration = Some(*v);
                } else {
                    let t: f64 = k.parse().map_err(|_| bad(format!("breakpoint time {k:?} is not a number")))?;
                    breakpoints.push((t, *v));
                }
            }
            let duration = duration.or(breakpoints.last().map(|b| b.0)).ok_or_else(|| bad("no breakpoints".into()))?;
            Waveform::PiecewiseLinear { breakpoints, duration }
        }
        other => return Err(bad(format!("unknown kind {other:?} (ramp, sine, pwl)"))),
    };
    waveform.validate().map_err(|e| bad(e.to_string()))?;
    Ok(waveform)
}
