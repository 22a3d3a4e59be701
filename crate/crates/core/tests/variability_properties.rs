use nalgebra::Matrix3;
use proptest::prelude::*;
use qphi_core::model::ModelParams;
use qphi_core::variability::{
    correlation_matrix, covariance_matrix, normalized_histogram, pearson, sample_parameters, EnsembleRecord,
    ParameterDistribution, ParameterEnsemble,
};

fn ensemble(triples: &[(f64, f64, f64)]) -> ParameterEnsemble {
    ParameterEnsemble {
        records: triples
            .iter()
            .enumerate()
            .map(|(k, &(phi_rst, q_rst, n))| EnsembleRecord {
                cycle_id: k as u64,
                params: ModelParams { q_rst, phi_rst, n },
                reset: None,
            })
            .collect(),
    }
}

fn triples(min: usize) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.1..10.0f64, 1e-5..1e-2f64, 0.5..3.0f64), min..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pearson_is_invariant_under_positive_affine_maps(
        pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..50),
        a in 1e-3..1e3f64,
        b in -1e3..1e3f64,
        which in any::<bool>(),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let Ok(base) = pearson(&x, &y) else { return Ok(()) };
        let moved = if which {
            pearson(&x.iter().map(|v| a * v + b).collect::<Vec<_>>(), &y)
        } else {
            pearson(&x, &y.iter().map(|v| a * v + b).collect::<Vec<_>>())
        };
        prop_assert!((moved.unwrap() - base).abs() <= 1e-9);
        prop_assert!((-1.0..=1.0).contains(&base));
    }
}

proptest! {
    #[test]
    fn covariance_is_symmetric_psd(t in triples(3)) {
        let cov = covariance_matrix(&ensemble(&t)).unwrap();
        let m = Matrix3::from_fn(|i, j| cov[i][j]);
        prop_assert_eq!(m, m.transpose());
        let trace = m.trace();
        for ev in m.symmetric_eigen().eigenvalues.iter() {
            prop_assert!(*ev >= -1e-12 * trace, "eigenvalue {} with trace {}", ev, trace);
        }
    }

    #[test]
    fn correlation_matrix_invariants(t in triples(3)) {
        let Ok(c) = correlation_matrix(&ensemble(&t), false) else { return Ok(()) };
        for i in 0..3 {
            prop_assert_eq!(c.values[i][i], 1.0);
            for j in 0..3 {
                prop_assert_eq!(c.values[i][j], c.values[j][i]);
                prop_assert!((-1.0..=1.0).contains(&c.values[i][j]));
            }
        }
    }

    #[test]
    fn histogram_counts_everything(values in prop::collection::vec(1e-3..1e3f64, 1..200), bins in 1usize..30) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let h = normalized_histogram(&values, mean, bins).unwrap();
        prop_assert_eq!(h.total(), values.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
        prop_assert!(h.edges.windows(2).all(|w| w[1] > w[0]));
        for v in &values {
            let x = v / mean;
            prop_assert!(x >= h.edges[0] && x <= h.edges[bins]);
        }
    }
}

#[test]
fn sampled_covariance_converges_to_input() {
    let mean = ModelParams { q_rst: 562e-6, phi_rst: 3.28, n: 1.5 };
    let std = ModelParams { q_rst: 100e-6, phi_rst: 0.5, n: 0.1 };
    let corr = [[1.0, 0.6, -0.3], [0.6, 1.0, 0.2], [-0.3, 0.2, 1.0]];
    let dist = ParameterDistribution::with_correlation(mean, std, corr);
    let sampled = sample_parameters(&dist, 10_000, 7).unwrap();
    let cov = covariance_matrix(&sampled).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let scale = (dist.covariance[i][i] * dist.covariance[j][j]).sqrt();
            let err = (cov[i][j] - dist.covariance[i][j]).abs() / scale;
            assert!(err < 0.1, "({i}, {j}): {} vs {}", cov[i][j], dist.covariance[i][j]);
        }
    }
}

#[test]
fn sampling_ignores_thread_count() {
    let mean = ModelParams { q_rst: 562e-6, phi_rst: 3.28, n: 1.5 };
    let std = ModelParams { q_rst: 255e-6, phi_rst: 0.76, n: 0.0999 };
    let dist = ParameterDistribution::independent(mean, std);
    let parallel = sample_parameters(&dist, 500, 11).unwrap();
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        assert_eq!(pool.install(|| sample_parameters(&dist, 500, 11).unwrap()), parallel);
    }
}
