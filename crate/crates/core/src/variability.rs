//! Cycle-to-cycle variability: ensemble statistics and correlated sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::ResetPoint;
use crate::model::ModelParams;

/// Parameter order used by every 3x3 matrix in this module.
pub const PARAM_LABELS: [&str; 3] = ["phi_rst", "q_rst", "n"];

pub type Matrix3 = [[f64; 3]; 3];

/// Redraw budget per sample before giving up on a truncated draw.
const MAX_DRAWS_PER_SAMPLE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub cycle_id: u64,
    pub params: ModelParams,
    /// Present when the record came from an extracted measurement.
    pub reset: Option<ResetPoint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterEnsemble {
    pub records: Vec<EnsembleRecord>,
}

impl ParameterEnsemble {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn phi_rst(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.params.phi_rst).collect()
    }

    pub fn q_rst(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.params.q_rst).collect()
    }

    pub fn n(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.params.n).collect()
    }

    /// Reset voltages, if every record carries a reset point.
    pub fn v_rst(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.reset.as_ref().map(|p| p.v_rst)).collect()
    }

    pub fn i_rst(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.reset.as_ref().map(|p| p.i_rst)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantityStats {
    pub mean: f64,
    /// Sample (n − 1) standard deviation; zero for a single value.
    pub std: f64,
}

impl QuantityStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub phi_rst: QuantityStats,
    pub q_rst: QuantityStats,
    pub v_rst: Option<QuantityStats>,
    pub i_rst: Option<QuantityStats>,
    pub n: QuantityStats,
}

pub fn summarize(ensemble: &ParameterEnsemble) -> Result<SummaryStats> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(SummaryStats {
        count: ensemble.len(),
        phi_rst: QuantityStats::of(&ensemble.phi_rst())?,
        q_rst: QuantityStats::of(&ensemble.q_rst())?,
        v_rst: ensemble.v_rst().map(|v| QuantityStats::of(&v)).transpose()?,
        i_rst: ensemble.i_rst().map(|v| QuantityStats::of(&v)).transpose()?,
        n: QuantityStats::of(&ensemble.n())?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges in units of the mean; `counts.len() + 1` entries.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Square-root rule.
pub fn default_bin_count(size: usize) -> usize {
    ((size as f64).sqrt().ceil() as usize).max(1)
}

/// Histogram of `values / mean` with `bin_count` equal-width bins spanning
/// the normalized data. The last bin is closed on the right. A zero-width
/// span is widened to ±0.5 around the common value.
pub fn normalized_histogram(values: &[f64], mean: f64, bin_count: usize) -> Result<Histogram> {
    if !(mean > 0.0) {
        return Err(Error::NonPositiveMean(mean));
    }
    if bin_count == 0 {
        return Err(Error::InvalidConfig("bin count must be >= 1".into()));
    }
    if values.is_empty() {
        return Ok(Histogram { edges: Vec::new(), counts: Vec::new() });
    }
    let scaled: Vec<f64> = values.iter().map(|v| v / mean).collect();
    let mut lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bin_count as f64;
    let mut edges: Vec<f64> = (0..=bin_count).map(|k| lo + width * k as f64).collect();
    edges[bin_count] = hi;
    let mut counts = vec![0usize; bin_count];
    for x in scaled {
        let k = (((x - lo) / width).floor() as usize).min(bin_count - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Pearson product-moment correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::TooFewRecords { found: x.len(), required: 3 });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Pairwise Pearson coefficients over `(phi_rst, q_rst, n)`, followed by
/// `(v_rst, i_rst)` when requested and available.
pub fn correlation_matrix(ensemble: &ParameterEnsemble, include_vi: bool) -> Result<CorrelationMatrix> {
    let mut columns = vec![
        ("phi_rst", ensemble.phi_rst()),
        ("q_rst", ensemble.q_rst()),
        ("n", ensemble.n()),
    ];
    if include_vi {
        if let (Some(v), Some(i)) = (ensemble.v_rst(), ensemble.i_rst()) {
            columns.push(("v_rst", v));
            columns.push(("i_rst", i));
        }
    }
    let m = columns.len();
    let mut values = vec![vec![1.0; m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let r = pearson(&columns[a].1, &columns[b].1)?;
            values[a][b] = r;
            values[b][a] = r;
        }
    }
    Ok(CorrelationMatrix { labels: columns.iter().map(|c| c.0.to_string()).collect(), values })
}

/// Sample covariance of `(phi_rst, q_rst, n)`.
pub fn covariance_matrix(ensemble: &ParameterEnsemble) -> Result<Matrix3> {
    if ensemble.len() < 3 {
        return Err(Error::TooFewRecords { found: ensemble.len(), required: 3 });
    }
    let rows: Vec<[f64; 3]> = ensemble.records.iter().map(|r| r.params.as_array()).collect();
    let n = rows.len() as f64;
    let mut mean = [0.0; 3];
    for row in &rows {
        for k in 0..3 {
            mean[k] += row[k] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for row in &rows {
        for a in 0..3 {
            for b in a..3 {
                cov[a][b] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..3 {
        for b in a..3 {
            cov[a][b] /= n - 1.0;
            cov[b][a] = cov[a][b];
        }
    }
    Ok(cov)
}

/// Multivariate Gaussian description of `(phi_rst, q_rst, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDistribution {
    pub mean: ModelParams,
    /// Covariance in [`PARAM_LABELS`] order.
    pub covariance: Matrix3,
}

impl ParameterDistribution {
    /// Independent parameters with the given standard deviations.
    pub fn independent(mean: ModelParams, std: ModelParams) -> Self {
        let s = std.as_array();
        let mut covariance = [[0.0; 3]; 3];
        for k in 0..3 {
            covariance[k][k] = s[k] * s[k];
        }
        Self { mean, covariance }
    }

    /// Builds the covariance from standard deviations and a correlation matrix.
    pub fn with_correlation(mean: ModelParams, std: ModelParams, correlation: Matrix3) -> Self {
        let s = std.as_array();
        let mut covariance = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                covariance[a][b] = correlation[a][b] * s[a] * s[b];
            }
        }
        Self { mean, covariance }
    }

    /// Mean and covariance estimated from an ensemble.
    pub fn estimate(ensemble: &ParameterEnsemble) -> Result<Self> {
        let summary = summarize(ensemble)?;
        Ok(Self {
            mean: ModelParams { q_rst: summary.q_rst.mean, phi_rst: summary.phi_rst.mean, n: summary.n.mean },
            covariance: covariance_matrix(ensemble)?,
        })
    }
}

/// Lower-triangular factor `L` with `L·Lᵀ = cov`, tolerating semidefinite input.
///
/// The factorization runs on the correlation-scaled matrix so that parameters
/// with very different magnitudes (coulombs vs volt-seconds) share one
/// tolerance. Zero-variance components get a zero row. If the matrix is
/// slightly indefinite, diagonal jitter is added in growing steps.
pub fn psd_cholesky(cov: &Matrix3) -> Result<Matrix3> {
    let scale_max = cov.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for a in 0..3 {
        if !cov[a][a].is_finite() || cov[a][a] < 0.0 {
            return Err(Error::NotPsd(format!("diagonal entry {a} is {}", cov[a][a])));
        }
        for b in 0..3 {
            if !cov[a][b].is_finite() {
                return Err(Error::NotPsd(format!("entry ({a}, {b}) is not finite")));
            }
            if (cov[a][b] - cov[b][a]).abs() > 1e-12 * scale_max {
                return Err(Error::NotPsd(format!("entry ({a}, {b}) differs from ({b}, {a})")));
            }
        }
    }
    let sd: [f64; 3] = std::array::from_fn(|k| cov[k][k].sqrt());
    let mut corr = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            if sd[a] > 0.0 && sd[b] > 0.0 {
                corr[a][b] = 0.5 * (cov[a][b] + cov[b][a]) / (sd[a] * sd[b]);
            } else if cov[a][b].abs() > 1e-12 * scale_max {
                return Err(Error::NotPsd(format!("entry ({a}, {b}) is nonzero for a zero-variance component")));
            }
        }
    }

    let mut jitter = 0.0;
    loop {
        let mut attempt = corr;
        for k in 0..3 {
            if sd[k] > 0.0 {
                attempt[k][k] += jitter;
            }
        }
        if let Some(l) = semidefinite_cholesky(&attempt) {
            let mut out = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..=a {
                    out[a][b] = l[a][b] * sd[a];
                }
            }
            return Ok(out);
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
        if jitter > 1e-6 {
            return Err(Error::NotPsd("factorization failed even with diagonal jitter".into()));
        }
    }
}

fn semidefinite_cholesky(a: &Matrix3) -> Option<Matrix3> {
    const TOL: f64 = 1e-12;
    let mut l = [[0.0; 3]; 3];
    for j in 0..3 {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d > TOL {
            l[j][j] = d.sqrt();
            for i in j + 1..3 {
                let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                l[i][j] = s / l[j][j];
            }
        } else if d >= -TOL {
            for i in j + 1..3 {
                let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if s.abs() > 1e-9 {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// Random stream for sample `index`: independent of how samples are scheduled.
pub(crate) fn stream_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `count` parameter triples from a Gaussian truncated to positive
/// values. Sample `k` uses its own random stream derived from `(seed, k)`,
/// so the result is bitwise reproducible regardless of thread count.
pub fn sample_parameters(dist: &ParameterDistribution, count: usize, seed: u64) -> Result<ParameterEnsemble> {
    if count == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    let mean = dist.mean.as_array();
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidParams("distribution mean must be finite".into()));
    }
    let l = psd_cholesky(&dist.covariance)?;

    let draws: Vec<Option<([f64; 3], usize)>> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            for attempt in 1..=MAX_DRAWS_PER_SAMPLE {
                let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                let x: [f64; 3] = std::array::from_fn(|a| mean[a] + (0..=a).map(|b| l[a][b] * z[b]).sum::<f64>());
                if x.iter().all(|&v| v > 0.0) {
                    return Some((x, attempt));
                }
            }
            None
        })
        .collect();

    let mut records = Vec::with_capacity(count);
    let mut total_draws = 0usize;
    for (k, draw) in draws.into_iter().enumerate() {
        let Some((x, attempts)) = draw else {
            return Err(Error::RejectionRate { rate: 1.0 - 1.0 / MAX_DRAWS_PER_SAMPLE as f64 });
        };
        total_draws += attempts;
        records.push(EnsembleRecord {
            cycle_id: k as u64,
            params: ModelParams { phi_rst: x[0], q_rst: x[1], n: x[2] },
            reset: None,
        });
    }
    let rate = 1.0 - count as f64 / total_draws as f64;
    if rate > 0.5 {
        return Err(Error::RejectionRate { rate });
    }
    Ok(ParameterEnsemble { records })
}

/// JSON statistics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub count: usize,
    pub phi_rst: QuantityStats,
    pub q_rst: QuantityStats,
    pub n: QuantityStats,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub v_rst: Option<QuantityStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub i_rst: Option<QuantityStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub covariance: Option<Matrix3>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub correlation: Option<CorrelationMatrix>,
    pub histograms: Vec<NamedHistogram>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHistogram {
    pub quantity: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl StatsReport {
    /// Summary, histograms of `phi_rst` and `q_rst`, and, with three or more
    /// records, covariance and correlation.
    pub fn build(ensemble: &ParameterEnsemble, seed: Option<u64>) -> Result<Self> {
        let summary = summarize(ensemble)?;
        let bins = default_bin_count(ensemble.len());
        let mut histograms = Vec::new();
        for (name, values, mean) in [
            ("phi_rst", ensemble.phi_rst(), summary.phi_rst.mean),
            ("q_rst", ensemble.q_rst(), summary.q_rst.mean),
        ] {
            let h = normalized_histogram(&values, mean, bins)?;
            histograms.push(NamedHistogram { quantity: name.into(), edges: h.edges, counts: h.counts });
        }
        let (covariance, correlation) = if ensemble.len() >= 3 {
            (Some(covariance_matrix(ensemble)?), correlation_matrix(ensemble, true).ok())
        } else {
            (None, None)
        };
        Ok(Self {
            count: summary.count,
            phi_rst: summary.phi_rst,
            q_rst: summary.q_rst,
            n: summary.n,
            v_rst: summary.v_rst,
            i_rst: summary.i_rst,
            covariance,
            correlation,
            histograms,
            seed,
        })
    }

    pub fn distribution(&self) -> ParameterDistribution {
        let mean = ModelParams { q_rst: self.q_rst.mean, phi_rst: self.phi_rst.mean, n: self.n.mean };
        match self.covariance {
            Some(covariance) => ParameterDistribution { mean, covariance },
            None => ParameterDistribution::independent(
                mean,
                ModelParams { q_rst: self.q_rst.std, phi_rst: self.phi_rst.std, n: self.n.std },
            ),
        }
    }
}
