//! Reset-sweep analysis for bipolar memristors in the charge-flux domain.
//!
//! Measured I-V sweeps are integrated into Q-φ curves, the reset corner is
//! located by intersecting a rise line with a plateau line, and the pre-reset
//! branch is described by `Q = Q_rst · min(1, (φ/φ_rst)^n)`. Cycle-to-cycle
//! variability is summarized by the joint distribution of `(φ_rst, Q_rst, n)`,
//! which can be sampled and fed back through the simulator.

pub mod error;
pub mod extraction;
pub mod model;
pub mod pipeline;
pub mod qphi;
pub mod simulator;
pub mod trace;
pub mod variability;

pub use error::{Error, Result};
pub use extraction::{extract, CycleReport, Extraction, ExtractionConfig, LineFit, ResetPoint};
pub use model::{fit_exponent, memductance, model_charge, normalize_curve, ModelParams, ParamRecord};
pub use pipeline::{analyze_cycle, analyze_cycles, CycleAnalysis};
pub use qphi::{integrate_trace, phi_to_time, QPhiCurve, QPhiPoint};
pub use simulator::{simulate_ensemble, simulate_ensemble_map, simulate_reset_trace, SimConfig, Waveform};
pub use trace::{parse_trace_file, CycleSet, FormatConfig, SweepSample, SweepTrace};
pub use variability::{sample_parameters, ParameterDistribution, ParameterEnsemble, StatsReport};
