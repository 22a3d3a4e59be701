use proptest::prelude::*;
use qphi_core::model::{model_charge, ModelParams};
use qphi_core::qphi::integrate_trace;
use qphi_core::simulator::{simulate_ensemble, simulate_reset_trace, SimConfig, Waveform};
use qphi_core::trace::{parse_trace_file, write_trace_csv, FormatConfig};
use qphi_core::variability::ParameterDistribution;

fn params() -> impl Strategy<Value = ModelParams> {
    (1e-5..1e-2f64, 0.5..5.0f64, 0.5..3.0f64).prop_map(|(q_rst, phi_rst, n)| ModelParams { q_rst, phi_rst, n })
}

/// Nonnegative waveforms reaching a flux of `2·phi_rst`.
fn waveform(p: ModelParams) -> impl Strategy<Value = Waveform> {
    let target = 2.0 * p.phi_rst;
    prop_oneof![
        (0.5..3.0f64).prop_map(move |rate| Waveform::Ramp { rate, duration: (2.0 * target / rate).sqrt() * 1.02 }),
        (0.5..3.0f64).prop_map(move |amp| {
            // half period of flux 2·amp/ω must exceed the target
            let frequency = amp / (std::f64::consts::PI * 1.1 * target);
            Waveform::Sine { amplitude: amp, frequency, duration: 0.5 / frequency }
        }),
        (0.5..3.0f64, 0.1..0.9f64).prop_map(move |(level, frac)| {
            let rise = frac * target / level;
            // flux of the ramp-up is level·rise/2, the hold supplies the rest
            let hold = (target - 0.5 * level * rise) / level * 1.02;
            Waveform::PiecewiseLinear { breakpoints: vec![(0.0, 0.0), (rise, level)], duration: rise + hold }
        }),
    ]
}

fn case() -> impl Strategy<Value = (ModelParams, Waveform)> {
    params().prop_flat_map(|p| (Just(p), waveform(p)))
}

fn config_for(w: &Waveform, p: &ModelParams) -> SimConfig {
    // keep flux steps near phi_rst / 2000
    let peak = match w {
        Waveform::Ramp { rate, duration } => rate * duration,
        Waveform::Sine { amplitude, .. } => *amplitude,
        Waveform::PiecewiseLinear { breakpoints, .. } => breakpoints.iter().map(|b| b.1).fold(0.0, f64::max),
    };
    SimConfig { dt: p.phi_rst / 2000.0 / peak, noise_sigma_q: 0.0, seed: 0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn charge_is_conserved_and_flat_after_reset((p, w) in case()) {
        let trace = simulate_reset_trace(&w, &p, &config_for(&w, &p)).unwrap();
        let curve = integrate_trace(&trace).unwrap();
        for (pt, s) in curve.points.iter().zip(&trace.samples) {
            let model = model_charge(pt.phi.max(0.0), &p).unwrap();
            prop_assert!((pt.q - model).abs() <= 0.005 * p.q_rst, "phi {}: {} vs {}", pt.phi, pt.q, model);
            prop_assert!(pt.q <= p.q_rst * (1.0 + 1e-12));
            if pt.phi >= p.phi_rst {
                prop_assert_eq!(s.i, 0.0);
            }
        }
    }

    #[test]
    fn final_charge_is_waveform_independent((p, w) in case()) {
        let trace = simulate_reset_trace(&w, &p, &config_for(&w, &p)).unwrap();
        let curve = integrate_trace(&trace).unwrap();
        let last = curve.points.last().unwrap();
        prop_assert!(last.phi >= 2.0 * p.phi_rst);
        prop_assert!((last.q / p.q_rst - 1.0).abs() <= 0.005, "{} vs {}", last.q, p.q_rst);
    }

    #[test]
    fn halving_dt_barely_moves_final_charge((p, w) in case()) {
        let coarse = config_for(&w, &p);
        let fine = SimConfig { dt: coarse.dt / 2.0, ..coarse };
        let q = |c: &SimConfig| {
            let curve = integrate_trace(&simulate_reset_trace(&w, &p, c).unwrap()).unwrap();
            curve.points.last().unwrap().q
        };
        let (a, b) = (q(&coarse), q(&fine));
        prop_assert!(((a - b) / b).abs() < 1e-3, "{} vs {}", a, b);
    }
}

#[test]
fn ohmic_device_follows_closed_form() {
    let p = ModelParams { q_rst: 2e-3, phi_rst: 4.0, n: 1.0 };
    let w = Waveform::Sine { amplitude: 2.0, frequency: 0.05, duration: 10.0 };
    let trace = simulate_reset_trace(&w, &p, &SimConfig { dt: 1e-3, ..Default::default() }).unwrap();
    let curve = integrate_trace(&trace).unwrap();
    let g = p.q_rst / p.phi_rst;
    for (pt, s) in curve.points.iter().zip(&trace.samples) {
        if pt.phi < 0.99 * p.phi_rst {
            assert!((s.i - g * s.v).abs() <= 1e-15, "t {}: {} vs {}", s.t, s.i, g * s.v);
        }
    }
}

#[test]
fn simulated_ensemble_survives_a_csv_round_trip() {
    let mean = ModelParams { q_rst: 562e-6, phi_rst: 3.28, n: 1.5 };
    let std = ModelParams { q_rst: 50e-6, phi_rst: 0.2, n: 0.05 };
    let dist = ParameterDistribution::independent(mean, std);
    let w = Waveform::Ramp { rate: 1.0, duration: 4.0 };
    let config = SimConfig { dt: 2e-3, noise_sigma_q: 0.01, seed: 3 };
    let sim = simulate_ensemble(&dist, 5, &w, &config).unwrap();
    let text = write_trace_csv(&sim.cycles.traces);
    let parsed = parse_trace_file(text.as_bytes(), &FormatConfig::default()).unwrap();
    assert_eq!(parsed.traces, sim.cycles.traces);
}
