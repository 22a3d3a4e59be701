//! Measurement traces: parsing, validation, serialization and cycle splitting.
//!
//! The on-disk format is CSV with a mandatory header, `t,v,i` or
//! `t,v,i,cycle`, in that exact column order. Values are SI (seconds, volts,
//! amperes). Lines starting with `#` are comments; a `# units: t=s v=V i=A`
//! comment is checked and any other unit declaration is rejected.

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    /// Time in seconds.
    pub t: f64,
    /// Voltage in volts.
    pub v: f64,
    /// Current in amperes.
    pub i: f64,
}

impl SweepSample {
    pub const fn new(t: f64, v: f64, i: f64) -> Self {
        Self { t, v, i }
    }
}

/// One reset cycle: time-ordered samples with a cycle label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTrace {
    pub cycle_id: u64,
    pub samples: Vec<SweepSample>,
}

impl SweepTrace {
    /// Builds a trace, rejecting samples that violate the trace invariants.
    pub fn new(cycle_id: u64, samples: Vec<SweepSample>) -> Result<Self> {
        let trace = Self { cycle_id, samples };
        trace.check()?;
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time span `(t_first, t_last)`.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    pub(crate) fn check(&self) -> Result<()> {
        let report = validate_trace(self);
        if report.is_clean() {
            Ok(())
        } else {
            Err(Error::InvalidTrace(format!("cycle {}: {report}", self.cycle_id)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSet {
    pub traces: Vec<SweepTrace>,
    pub source: String,
}

impl CycleSet {
    pub fn new(traces: Vec<SweepTrace>, source: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for trace in &traces {
            if !seen.insert(trace.cycle_id) {
                return Err(Error::DuplicateCycleId(trace.cycle_id));
            }
        }
        Ok(Self { traces, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FormatConfig {
    /// Provenance recorded into the returned [`CycleSet`].
    pub source: String,
    /// When set and the file has no `cycle` column, the single trace is
    /// split with [`split_cycles`] at this voltage threshold.
    pub split_threshold_v: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleField {
    T,
    V,
    I,
}

impl fmt::Display for SampleField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::T => "t",
            Self::V => "v",
            Self::I => "i",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceIssue {
    NonFinite { index: usize, field: SampleField },
    NonIncreasingTime { index: usize },
    TooFewSamples { count: usize },
}

impl fmt::Display for TraceIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonFinite { index, field } => write!(f, "non-finite {field} at index {index}"),
            Self::NonIncreasingTime { index } => write!(f, "time not strictly increasing at index {index}"),
            Self::TooFewSamples { count } => {
                write!(f, "only {count} samples, at least {MIN_SAMPLES} required")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<TraceIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("clean");
        }
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Reports every invariant violation in `trace` without modifying it.
pub fn validate_trace(trace: &SweepTrace) -> ValidationReport {
    validate_samples(&trace.samples)
}

pub fn validate_samples(samples: &[SweepSample]) -> ValidationReport {
    let mut issues = Vec::new();
    if samples.len() < MIN_SAMPLES {
        issues.push(TraceIssue::TooFewSamples { count: samples.len() });
    }
    for (index, s) in samples.iter().enumerate() {
        for (field, value) in [(SampleField::T, s.t), (SampleField::V, s.v), (SampleField::I, s.i)] {
            if !value.is_finite() {
                issues.push(TraceIssue::NonFinite { index, field });
            }
        }
    }
    for (index, pair) in samples.windows(2).enumerate() {
        // NaN comparisons fail here too, but those are already reported above.
        if pair[0].t.is_finite() && pair[1].t.is_finite() && pair[1].t <= pair[0].t {
            issues.push(TraceIssue::NonIncreasingTime { index: index + 1 });
        }
    }
    ValidationReport { issues }
}

fn check_units(line: usize, spec: &str) -> Result<()> {
    let mut declared = Vec::new();
    for token in spec.split_whitespace() {
        let (key, unit) = token.split_once('=').ok_or_else(|| Error::UnsupportedUnits {
            line,
            detail: format!("cannot read `{token}`"),
        })?;
        let expected = match key {
            "t" => "s",
            "v" => "V",
            "i" => "A",
            _ => {
                return Err(Error::UnsupportedUnits { line, detail: format!("unknown column `{key}`") });
            }
        };
        if unit != expected {
            return Err(Error::UnsupportedUnits {
                line,
                detail: format!("{key}={unit}, expected {key}={expected}"),
            });
        }
        declared.push(key);
    }
    if declared.is_empty() {
        return Err(Error::UnsupportedUnits { line, detail: "empty units declaration".into() });
    }
    Ok(())
}

fn parse_value(line: usize, name: &str, raw: &str) -> Result<f64> {
    let value: f64 = raw.parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("column `{name}`: cannot parse `{raw}` as a number"),
    })?;
    if !value.is_finite() {
        return Err(Error::MalformedRow { line, reason: format!("column `{name}`: non-finite value `{raw}`") });
    }
    Ok(value)
}

struct PendingCycle {
    id: u64,
    first_line: usize,
    samples: Vec<SweepSample>,
}

fn finish_cycle(pending: PendingCycle) -> Result<SweepTrace> {
    if pending.samples.len() < MIN_SAMPLES {
        return Err(Error::InvalidTrace(format!(
            "cycle {} starting at line {} has {} samples, at least {MIN_SAMPLES} required",
            pending.id,
            pending.first_line,
            pending.samples.len()
        )));
    }
    Ok(SweepTrace { cycle_id: pending.id, samples: pending.samples })
}

/// Parses CSV trace content into a [`CycleSet`].
pub fn parse_trace_file(bytes: &[u8], config: &FormatConfig) -> Result<CycleSet> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::MalformedRow { line: 1, reason: format!("content is not UTF-8: {e}") })?;

    let mut has_cycle_column: Option<bool> = None;
    let mut finished: Vec<SweepTrace> = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut current: Option<PendingCycle> = None;

    for (k, raw_line) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(spec) = comment.trim().strip_prefix("units:") {
                check_units(line, spec)?;
            }
            continue;
        }

        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let Some(with_cycle) = has_cycle_column else {
            has_cycle_column = Some(match fields.as_slice() {
                ["t", "v", "i"] => false,
                ["t", "v", "i", "cycle"] => true,
                _ => return Err(Error::BadHeader { line, found: trimmed.to_string() }),
            });
            continue;
        };

        let expected = if with_cycle { 4 } else { 3 };
        if fields.len() != expected {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {expected} columns, found {}", fields.len()),
            });
        }
        let sample = SweepSample {
            t: parse_value(line, "t", fields[0])?,
            v: parse_value(line, "v", fields[1])?,
            i: parse_value(line, "i", fields[2])?,
        };
        let cycle = if with_cycle {
            fields[3].parse::<u64>().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("column `cycle`: `{}` is not a non-negative integer", fields[3]),
            })?
        } else {
            0
        };

        let switch = current.as_ref().is_none_or(|c| c.id != cycle);
        if switch {
            if let Some(done) = current.take() {
                finished.push(finish_cycle(done)?);
            }
            if !seen_ids.insert(cycle) {
                return Err(Error::InterleavedCycle { line, cycle });
            }
            current = Some(PendingCycle { id: cycle, first_line: line, samples: Vec::new() });
        }
        let pending = current.as_mut().expect("cycle initialized above");
        if let Some(prev) = pending.samples.last() {
            if sample.t == prev.t {
                return Err(Error::DuplicateTimestamp { line, cycle });
            }
            if sample.t < prev.t {
                return Err(Error::NonMonotoneTime { line, cycle });
            }
        }
        pending.samples.push(sample);
    }

    let Some(done) = current else {
        return Err(Error::EmptyFile);
    };
    finished.push(finish_cycle(done)?);

    if has_cycle_column == Some(false) {
        if let Some(threshold) = config.split_threshold_v {
            let single = finished.pop().expect("one trace without a cycle column");
            finished = split_cycles(&single, threshold)?;
            for (k, trace) in finished.iter_mut().enumerate() {
                trace.cycle_id = k as u64;
            }
        }
    }

    CycleSet::new(finished, config.source.clone())
}

/// Serializes traces in the CSV trace format, always with a `cycle` column.
///
/// Numbers are written in shortest round-trip scientific notation, so
/// parsing the output reproduces the sample values bit for bit.
pub fn write_trace_csv(traces: &[SweepTrace]) -> String {
    let mut out = String::from("# units: t=s v=V i=A\nt,v,i,cycle\n");
    for trace in traces {
        for s in &trace.samples {
            let _ = writeln!(out, "{:e},{:e},{:e},{}", s.t, s.v, s.i, trace.cycle_id);
        }
    }
    out
}

/// Splits a concatenated recording into individual sweeps.
///
/// A new sweep starts at the first sample whose `|v|` drops below
/// `threshold_v` after the current sweep exceeded it. Leading low-voltage
/// runs belong to the sweep that follows them; a trailing run that never
/// exceeds the threshold is kept with the last sweep, as is any piece too
/// short to form a valid trace. Output ids count up from `trace.cycle_id`.
pub fn split_cycles(trace: &SweepTrace, threshold_v: f64) -> Result<Vec<SweepTrace>> {
    if !(threshold_v > 0.0) {
        return Err(Error::InvalidConfig(format!("split threshold must be > 0, got {threshold_v}")));
    }
    trace.check()?;

    let mut starts = vec![0usize];
    let mut armed = false;
    for (k, s) in trace.samples.iter().enumerate() {
        let above = s.v.abs() >= threshold_v;
        if above {
            armed = true;
        } else if armed {
            starts.push(k);
            armed = false;
        }
    }
    // The last boundary opens a new piece only if that piece later rises above threshold.
    if !armed && starts.len() > 1 {
        starts.pop();
    }

    let mut bounds: Vec<(usize, usize)> = Vec::new();
    for (k, &start) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(trace.samples.len());
        bounds.push((start, end));
    }
    // Merge pieces that would be too short into their predecessor (or successor for the first).
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (start, end) in bounds {
        match merged.last_mut() {
            Some(last) if end - start < MIN_SAMPLES || last.1 - last.0 < MIN_SAMPLES => last.1 = end,
            _ => merged.push((start, end)),
        }
    }

    Ok(merged
        .into_iter()
        .enumerate()
        .map(|(k, (start, end))| SweepTrace {
            cycle_id: trace.cycle_id + k as u64,
            samples: trace.samples[start..end].to_vec(),
        })
        .collect())
}
