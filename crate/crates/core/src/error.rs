use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // --- trace ingestion ---
    #[error("empty trace file: no header or no data rows")]
    EmptyFile,

    #[error("line {line}: expected header `t,v,i` or `t,v,i,cycle`, found `{found}`")]
    BadHeader { line: usize, found: String },

    #[error("line {line}: unsupported units ({detail}); only `t=s v=V i=A` is accepted")]
    UnsupportedUnits { line: usize, detail: String },

    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("line {line}: duplicate timestamp in cycle {cycle}")]
    DuplicateTimestamp { line: usize, cycle: u64 },

    #[error("line {line}: time decreases within cycle {cycle}")]
    NonMonotoneTime { line: usize, cycle: u64 },

    #[error("line {line}: cycle {cycle} reappears after other cycles")]
    InterleavedCycle { line: usize, cycle: u64 },

    #[error("duplicate cycle id {0} in cycle set")]
    DuplicateCycleId(u64),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    // --- charge-flux transform ---
    #[error("flux query {query} outside curve span [0, {max}]")]
    FluxOutOfRange { query: f64, max: f64 },

    #[error("flux is constant over points {start}..={end}; time is not uniquely defined")]
    FlatFlux { start: usize, end: usize },

    #[error("flux decreases across points {index}..={next}", next = index + 1)]
    NonMonotoneFlux { index: usize },

    #[error("curve does not belong to trace: {0}")]
    CurveTraceMismatch(String),

    #[error("curve is empty")]
    EmptyCurve,

    // --- reset extraction ---
    #[error("line fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("all flux values are equal; line fit is vertical")]
    VerticalData,

    #[error("no plateau: {0}")]
    NoPlateau(String),

    #[error("rise window needs at least 2 pre-plateau points, got {0}")]
    TooFewRisePoints(usize),

    #[error("no intersection: rise slope {rise} and plateau slope {plateau} are parallel")]
    NoIntersection { rise: f64, plateau: f64 },

    #[error("implausible reset point (phi = {phi}, q = {q}) outside the observed flux span [{min}, {max}]")]
    ImplausibleReset { phi: f64, q: f64, min: f64, max: f64 },

    #[error("{which} fit rms residual {rms:e} exceeds limit {limit:e}")]
    PoorFit { which: &'static str, rms: f64, limit: f64 },

    #[error("time {t} outside trace span [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // --- model ---
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("negative flux {0}")]
    NegativeFlux(f64),

    #[error("invalid reset values for normalization: phi_rst = {phi_rst}, q_rst = {q_rst}")]
    InvalidReset { phi_rst: f64, q_rst: f64 },

    #[error("fit range holds {found} points, need at least {required}")]
    TooFewFitPoints { found: usize, required: usize },

    #[error("nonpositive normalized charge at point {0} inside the fit range")]
    NonPositiveCharge(usize),

    // --- variability ---
    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("need at least {required} values, got {found}")]
    TooFewRecords { found: usize, required: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("input has zero variance")]
    ZeroVariance,

    #[error("histogram normalization mean must be positive, got {0}")]
    NonPositiveMean(f64),

    #[error("covariance is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("rejection rate {rate:.3} exceeds 0.5; means are too close to zero for a truncated Gaussian, review the parameters")]
    RejectionRate { rate: f64 },

    // --- simulator ---
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("negative drive voltage {v} at sample {index}; reset sweeps are unipolar")]
    NegativeVoltage { index: usize, v: f64 },

    #[error("timestep too large: flux step {step:e} at sample {index} exceeds phi_rst/100 = {limit:e}")]
    StepTooLarge { index: usize, step: f64, limit: f64 },
}
