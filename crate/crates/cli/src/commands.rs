//! Subcommand bodies. Each writes into an existing output directory and
//! returns whether every cycle succeeded.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use qphi_core::extraction::{extract, CycleReport};
use qphi_core::model::normalize_curve;
use qphi_core::pipeline::{analyze_cycle, CycleAnalysis};
use qphi_core::qphi::integrate_trace;
use qphi_core::simulator::{simulate_ensemble, simulate_reset_trace};
use qphi_core::trace::{parse_trace_file, validate_trace, write_trace_csv, CycleSet, SweepTrace, TraceIssue};
use qphi_core::variability::{
    summarize, ParameterDistribution, ParameterEnsemble, QuantityStats, StatsReport, PARAM_LABELS,
};

use crate::config::Settings;
use crate::error::{CliError, Status};
use crate::manifest::write_json;
use crate::plot::{self, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// I-V overlay of trace files.
    Iv,
    /// Q-φ overlay of trace files.
    Qphi,
    /// Normalized histograms of an ensemble.
    Histogram,
    /// Q_rst vs φ_rst and I_rst vs V_rst with correlation coefficients.
    Scatter,
    /// Normalized Q-φ curves of trace files with the model line.
    Normalized,
    /// The three pairwise projections of (φ_rst, Q_rst, n).
    Params,
}

pub const ENSEMBLE_FILE: &str = "ensemble.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACES_FILE: &str = "traces.csv";
pub const STATS_FILE: &str = "stats.json";

/// Expands directories into their `ext` files, sorted by name.
pub fn expand_inputs(inputs: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("no input files given".into()));
    }
    let mut out = Vec::new();
    for path in inputs {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(CliError::io(format!("reading directory {}", path.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(CliError::Usage(format!("no .{ext} files in {}", path.display())));
            }
            out.extend(found);
        } else if path.is_file() {
            out.push(path.clone());
        } else {
            return Err(CliError::Usage(format!("input {} does not exist", path.display())));
        }
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

struct Source {
    name: String,
    cycles: CycleSet,
}

fn load_traces(inputs: &[PathBuf], settings: &Settings) -> Result<Vec<Source>, CliError> {
    let files = expand_inputs(inputs, "csv")?;
    let mut names: Vec<String> = files.iter().map(|f| stem(f)).collect();
    // disambiguate equal stems from different directories
    for k in 0..names.len() {
        if names.iter().filter(|n| **n == names[k]).count() > 1 {
            names[k] = format!("{}_{k}", names[k]);
        }
    }
    files
        .iter()
        .zip(names)
        .map(|(path, name)| {
            let bytes = std::fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
            let cycles = parse_trace_file(&bytes, &settings.format_config(&path.display().to_string()))
                .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
            Ok(Source { name, cycles })
        })
        .collect()
}

fn flat_traces(sources: &[Source]) -> Vec<(&str, &SweepTrace)> {
    sources.iter().flat_map(|s| s.cycles.traces.iter().map(move |t| (s.name.as_str(), t))).collect()
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(CliError::io(format!("writing {}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn cycle_file(source: &str, cycle_id: u64) -> String {
    format!("{source}_cycle{cycle_id:04}.json")
}

#[derive(Debug, Clone, Serialize)]
struct CycleFailure {
    source: String,
    cycle_id: u64,
    error: String,
}

#[derive(Serialize)]
struct IngestCycle {
    source: String,
    cycle_id: u64,
    samples: usize,
    t_start: f64,
    t_end: f64,
    issues: Vec<TraceIssue>,
}

/// Parses and validates trace files; writes each input back in canonical
/// form plus an `ingest.json` (or `ingest.csv`) listing of the cycles.
pub fn cmd_ingest(inputs: &[PathBuf], settings: &Settings, out: &Path, format: Format) -> Result<Status, CliError> {
    let sources = load_traces(inputs, settings)?;
    let mut rows = Vec::new();
    for s in &sources {
        write_text(&out.join(format!("{}.csv", s.name)), &write_trace_csv(&s.cycles.traces))?;
        for t in &s.cycles.traces {
            let (t_start, t_end) = t.time_span().unwrap_or((0.0, 0.0));
            rows.push(IngestCycle {
                source: s.name.clone(),
                cycle_id: t.cycle_id,
                samples: t.len(),
                t_start,
                t_end,
                issues: validate_trace(t).issues,
            });
        }
    }
    match format {
        Format::Json => write_json(&out.join("ingest.json"), &rows)?,
        Format::Csv => {
            let mut text = String::from("source,cycle_id,samples,t_start,t_end,issues\n");
            for r in &rows {
                let _ = writeln!(text, "{},{},{},{:e},{:e},{}", r.source, r.cycle_id, r.samples, r.t_start, r.t_end, r.issues.len());
            }
            write_text(&out.join("ingest.csv"), &text)?;
        }
    }
    Ok(if rows.iter().all(|r| r.issues.is_empty()) { Status::Success } else { Status::Partial })
}

#[derive(Serialize)]
struct ExtractReport<'a> {
    source: &'a str,
    #[serde(flatten)]
    report: CycleReport,
}

#[derive(Serialize)]
struct ExtractSummary {
    cycles: usize,
    succeeded: usize,
    failed: usize,
    multi_step: usize,
    phi_rst: Option<QuantityStats>,
    q_rst: Option<QuantityStats>,
    v_rst: Option<QuantityStats>,
    i_rst: Option<QuantityStats>,
    failures: Vec<CycleFailure>,
}

fn stats_of(values: Vec<f64>) -> Option<QuantityStats> {
    QuantityStats::of(&values).ok()
}

/// Reset-point extraction for every cycle.
pub fn cmd_extract(inputs: &[PathBuf], settings: &Settings, out: &Path, format: Format) -> Result<Status, CliError> {
    let sources = load_traces(inputs, settings)?;
    let cycles = flat_traces(&sources);
    let results: Vec<Result<CycleReport, String>> = cycles
        .par_iter()
        .map(|(_, trace)| {
            let curve = integrate_trace(trace).map_err(|e| e.to_string())?;
            let extraction = extract(&curve, trace, &settings.extraction).map_err(|e| e.to_string())?;
            Ok(CycleReport::new(trace.cycle_id, &extraction))
        })
        .collect();

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    let mut table = String::from("source,cycle_id,phi_rst,q_rst,v_rst,i_rst,t_rst,substeps,error\n");
    if format == Format::Json {
        make_dir(&out.join("cycles"))?;
    }
    for ((source, trace), result) in cycles.iter().zip(results) {
        match result {
            Ok(report) => {
                let _ = writeln!(
                    table,
                    "{source},{},{:e},{:e},{:e},{:e},{:e},{},",
                    report.cycle_id, report.phi_rst, report.q_rst, report.v_rst, report.i_rst, report.t_rst, report.substep_count
                );
                if format == Format::Json {
                    write_json(&out.join("cycles").join(cycle_file(source, trace.cycle_id)), &ExtractReport { source, report: report.clone() })?;
                }
                ok.push(report);
            }
            Err(error) => {
                let failure = CycleFailure { source: source.to_string(), cycle_id: trace.cycle_id, error };
                let _ = writeln!(table, "{source},{},,,,,,,\"{}\"", trace.cycle_id, failure.error.replace('"', "'"));
                if format == Format::Json {
                    write_json(&out.join("cycles").join(cycle_file(source, trace.cycle_id)), &failure)?;
                }
                failures.push(failure);
            }
        }
    }
    if format == Format::Csv {
        write_text(&out.join("resets.csv"), &table)?;
    }
    let summary = ExtractSummary {
        cycles: cycles.len(),
        succeeded: ok.len(),
        failed: failures.len(),
        multi_step: ok.iter().filter(|r| r.substep_count > 1).count(),
        phi_rst: stats_of(ok.iter().map(|r| r.phi_rst).collect()),
        q_rst: stats_of(ok.iter().map(|r| r.q_rst).collect()),
        v_rst: stats_of(ok.iter().map(|r| r.v_rst).collect()),
        i_rst: stats_of(ok.iter().map(|r| r.i_rst).collect()),
        failures,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(if summary.failed == 0 { Status::Success } else { Status::Partial })
}

#[derive(Serialize)]
struct FitReport<'a> {
    source: &'a str,
    cycle_id: u64,
    phi_rst: f64,
    q_rst: f64,
    n: f64,
    rms_residual: f64,
    rms_log_residual: f64,
    fit_range: (f64, f64),
    fit_points: usize,
    multi_step: bool,
    substep_count: usize,
}

#[derive(Serialize)]
struct FitSummary {
    cycles: usize,
    succeeded: usize,
    failed: usize,
    phi_rst: Option<QuantityStats>,
    q_rst: Option<QuantityStats>,
    n: Option<QuantityStats>,
    multi_step_cycles: Vec<(String, u64)>,
    failures: Vec<CycleFailure>,
}

/// Extraction plus normalization and exponent fit for every cycle.
pub fn cmd_fit(inputs: &[PathBuf], settings: &Settings, out: &Path, format: Format) -> Result<Status, CliError> {
    let sources = load_traces(inputs, settings)?;
    let cycles = flat_traces(&sources);
    let results: Vec<Result<CycleAnalysis, String>> = cycles
        .par_iter()
        .map(|(_, trace)| analyze_cycle(trace, &settings.extraction, settings.fit_range).map_err(|e| e.to_string()))
        .collect();

    if format == Format::Json {
        make_dir(&out.join("cycles"))?;
    }
    let mut table = String::from("source,cycle_id,phi_rst,q_rst,n,rms_residual,multi_step,error\n");
    let mut failures = Vec::new();
    let mut ensemble = ParameterEnsemble::default();
    let mut multi = Vec::new();
    for ((source, trace), result) in cycles.iter().zip(results) {
        let path = out.join("cycles").join(cycle_file(source, trace.cycle_id));
        match result {
            Ok(a) => {
                let report = FitReport {
                    source,
                    cycle_id: a.cycle_id,
                    phi_rst: a.params.phi_rst,
                    q_rst: a.params.q_rst,
                    n: a.params.n,
                    rms_residual: a.rms_residual,
                    rms_log_residual: a.exponent.rms_log_residual,
                    fit_range: a.exponent.fit_range,
                    fit_points: a.exponent.point_count,
                    multi_step: a.extraction.is_multi_step(),
                    substep_count: a.extraction.substeps.len(),
                };
                let _ = writeln!(
                    table,
                    "{source},{},{:e},{:e},{:e},{:e},{},",
                    a.cycle_id, a.params.phi_rst, a.params.q_rst, a.params.n, a.rms_residual, report.multi_step
                );
                if format == Format::Json {
                    write_json(&path, &report)?;
                }
                if report.multi_step {
                    multi.push((source.to_string(), a.cycle_id));
                }
                ensemble.records.push(a.ensemble_record());
            }
            Err(error) => {
                let failure = CycleFailure { source: source.to_string(), cycle_id: trace.cycle_id, error };
                let _ = writeln!(table, "{source},{},,,,,,\"{}\"", trace.cycle_id, failure.error.replace('"', "'"));
                if format == Format::Json {
                    write_json(&path, &failure)?;
                }
                failures.push(failure);
            }
        }
    }
    if format == Format::Csv {
        write_text(&out.join("params.csv"), &table)?;
    }
    let summary = summarize(&ensemble).ok();
    let fit_summary = FitSummary {
        cycles: cycles.len(),
        succeeded: ensemble.len(),
        failed: failures.len(),
        phi_rst: summary.as_ref().map(|s| s.phi_rst),
        q_rst: summary.as_ref().map(|s| s.q_rst),
        n: summary.as_ref().map(|s| s.n),
        multi_step_cycles: multi,
        failures,
    };
    write_json(&out.join(SUMMARY_FILE), &fit_summary)?;
    write_json(&out.join(ENSEMBLE_FILE), &ensemble)?;
    Ok(if fit_summary.failed == 0 { Status::Success } else { Status::Partial })
}

/// Resolves ensemble inputs: JSON files, or directories holding `ensemble.json`.
fn load_ensembles(inputs: &[PathBuf]) -> Result<ParameterEnsemble, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("no ensemble files given".into()));
    }
    let mut merged = ParameterEnsemble::default();
    for path in inputs {
        let file = if path.is_dir() { path.join(ENSEMBLE_FILE) } else { path.clone() };
        if !file.is_file() {
            return Err(CliError::Usage(format!("no ensemble file at {}", file.display())));
        }
        let part: ParameterEnsemble = read_json(&file)?;
        merged.records.extend(part.records);
    }
    if merged.is_empty() {
        return Err(CliError::Failed("ensemble is empty".into()));
    }
    Ok(merged)
}

/// Summary, covariance, correlation and histograms of fitted ensembles.
pub fn cmd_stats(inputs: &[PathBuf], out: &Path, format: Format) -> Result<Status, CliError> {
    let ensemble = load_ensembles(inputs)?;
    let report = StatsReport::build(&ensemble, None)?;
    write_json(&out.join(STATS_FILE), &report)?;
    if format == Format::Csv {
        let mut text = String::from("quantity,mean,std\n");
        let rows = [
            ("phi_rst", Some(report.phi_rst)),
            ("q_rst", Some(report.q_rst)),
            ("v_rst", report.v_rst),
            ("i_rst", report.i_rst),
            ("n", Some(report.n)),
        ];
        for (name, stats) in rows {
            if let Some(s) = stats {
                let _ = writeln!(text, "{name},{:e},{:e}", s.mean, s.std);
            }
        }
        write_text(&out.join("stats.csv"), &text)?;
    }
    Ok(Status::Success)
}

/// One noiseless or noisy trace at the configured parameters.
pub fn cmd_simulate(settings: &Settings, out: &Path) -> Result<Status, CliError> {
    let trace = simulate_reset_trace(&settings.waveform, &settings.params, &settings.sim)?;
    write_text(&out.join(TRACES_FILE), &write_trace_csv(std::slice::from_ref(&trace)))?;
    Ok(Status::Success)
}

/// An ensemble of traces from sampled parameters. The distribution comes
/// from a `stats.json` input when one is given, else from the configured
/// means and standard deviations.
pub fn cmd_montecarlo(inputs: &[PathBuf], settings: &Settings, out: &Path) -> Result<Status, CliError> {
    if settings.count == 0 {
        return Err(CliError::Usage("count must be at least 1".into()));
    }
    let dist = match inputs {
        [] => ParameterDistribution::independent(settings.params, settings.spread),
        [path] => {
            let file = if path.is_dir() { path.join(STATS_FILE) } else { path.clone() };
            if !file.is_file() {
                return Err(CliError::Usage(format!("no stats file at {}", file.display())));
            }
            read_json::<StatsReport>(&file)?.distribution()
        }
        _ => return Err(CliError::Usage("montecarlo takes at most one stats file".into())),
    };
    let ens = simulate_ensemble(&dist, settings.count, &settings.waveform, &settings.sim)?;
    write_text(&out.join(TRACES_FILE), &write_trace_csv(&ens.cycles.traces))?;
    write_json(&out.join(ENSEMBLE_FILE), &ens.parameters)?;
    Ok(Status::Success)
}

fn svg_name(kind: PlotKind) -> &'static str {
    match kind {
        PlotKind::Iv => "iv.svg",
        PlotKind::Qphi => "qphi.svg",
        PlotKind::Histogram => "histogram.svg",
        PlotKind::Scatter => "scatter.svg",
        PlotKind::Normalized => "normalized.svg",
        PlotKind::Params => "params.svg",
    }
}

/// Renders one plot kind into `<kind>.svg`.
pub fn cmd_plot(kind: PlotKind, inputs: &[PathBuf], settings: &Settings, out: &Path) -> Result<Status, CliError> {
    let mut status = Status::Success;
    let svg = match kind {
        PlotKind::Iv | PlotKind::Qphi => {
            let sources = load_traces(inputs, settings)?;
            let mut series = Vec::new();
            for (_, t) in flat_traces(&sources) {
                if kind == PlotKind::Iv {
                    let (x, y) = t.samples.iter().map(|s| (s.v, s.i)).unzip();
                    series.push(Series { cycle_id: t.cycle_id, x, y });
                } else {
                    let curve = integrate_trace(t)?;
                    series.push(Series { cycle_id: t.cycle_id, x: curve.phi(), y: curve.q() });
                }
            }
            match kind {
                PlotKind::Iv => plot::overlay(&series, "I-V", "V (V)", "I (A)"),
                _ => plot::overlay(&series, "Q-phi", "phi (Vs)", "Q (C)"),
            }
        }
        PlotKind::Normalized => {
            let sources = load_traces(inputs, settings)?;
            let cycles = flat_traces(&sources);
            let analyses: Vec<_> =
                cycles.par_iter().map(|(_, t)| analyze_cycle(t, &settings.extraction, settings.fit_range)).collect();
            let mut series = Vec::new();
            let mut ns = Vec::new();
            for a in analyses {
                let Ok(a) = a else {
                    status = Status::Partial;
                    continue;
                };
                let norm = normalize_curve(&a.curve, &a.extraction.reset)?;
                let (x, y) = norm.points.iter().copied().unzip();
                series.push(Series { cycle_id: a.cycle_id, x, y });
                ns.push(a.params.n);
            }
            if series.is_empty() {
                return Err(CliError::Failed("no cycle could be fitted".into()));
            }
            plot::normalized_overlay(&series, ns.iter().sum::<f64>() / ns.len() as f64)
        }
        PlotKind::Histogram => {
            let e = load_ensembles(inputs)?;
            let mut quantities = vec![("phi_rst", e.phi_rst()), ("q_rst", e.q_rst())];
            if let (Some(v), Some(i)) = (e.v_rst(), e.i_rst()) {
                quantities.push(("v_rst", v));
                quantities.push(("i_rst", i));
            }
            // normalization needs a positive mean; noisy I_rst can average below zero
            quantities.retain(|(_, x)| x.iter().sum::<f64>() > 0.0);
            plot::histograms(&quantities)?
        }
        PlotKind::Scatter => {
            let e = load_ensembles(inputs)?;
            let mut panels = vec![("phi_rst", "q_rst", e.phi_rst(), e.q_rst())];
            if let (Some(v), Some(i)) = (e.v_rst(), e.i_rst()) {
                panels.push(("v_rst", "i_rst", v, i));
            }
            plot::scatter(&panels, true)?
        }
        PlotKind::Params => {
            let e = load_ensembles(inputs)?;
            let cols = [e.phi_rst(), e.q_rst(), e.n()];
            let panels: Vec<_> = [(0, 1), (0, 2), (1, 2)]
                .iter()
                .map(|&(a, b)| (PARAM_LABELS[a], PARAM_LABELS[b], cols[a].clone(), cols[b].clone()))
                .collect();
            plot::scatter(&panels, false)?
        }
    };
    write_text(&out.join(svg_name(kind)), &svg)?;
    Ok(status)
}
