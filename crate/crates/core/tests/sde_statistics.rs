//! Ensemble-level checks of the scalar and vector MC-SDE simulators.

use mcsde::rng::CounterRng;
use mcsde::sde::*;

fn sample_var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn reverse_ensemble_stays_on_ve_marginal() {
    let params = SdeParams::standard(0.7, 1.3).unwrap();
    let grid = TauGrid::new(1.0, 0.01, 400, GridSpacing::Geometric).unwrap();
    let n = 10_000;
    let ens = simulate_ensemble(&params, &grid, n, InitMode::ForwardMarginal, 11);
    for row in marginal_summary(&params, &ens, &grid.checkpoint_indices(5)) {
        let se = row.standard_error(n);
        assert!((row.mean - params.mu).abs() <= 3.0 * se, "{row:?}");
        assert!((row.var / row.expected_var - 1.0).abs() <= 0.05, "{row:?}");
        assert!((row.expected_var - 1.69 * row.tau * row.tau).abs() <= 1e-12);
    }
}

#[test]
fn vector_identity_matches_scalar_sigma_sq_two() {
    let grid = TauGrid::new(1.0, 0.05, 200, GridSpacing::Geometric).unwrap();
    let n = 10_000;
    let vec_ens = simulate_vector_ensemble([0.3, 0.5], &CovMatrix2::identity(), 2.0, &grid, n, 3).unwrap();
    let scalar = SdeParams::standard(0.8, 2f64.sqrt()).unwrap();
    let sc_ens = simulate_ensemble(&scalar, &grid, n, InitMode::ForwardMarginal, 4);
    for k in grid.checkpoint_indices(5) {
        let sums: Vec<f64> = vec_ens.iter().map(|t| t.values[k][0] + t.values[k][1]).collect();
        let scal: Vec<f64> = sc_ens.iter().map(|t| t.values[k][0]).collect();
        let ratio = sample_var(&sums) / sample_var(&scal);
        assert!((ratio - 1.0).abs() <= 0.05, "tau {} ratio {ratio}", grid.taus()[k]);
    }
}

#[test]
fn vector_sum_matches_total_variance() {
    let cov = CovMatrix2::new(1.0, 4.0, -0.5);
    let grid = TauGrid::new(0.5, 0.02, 150, GridSpacing::Geometric).unwrap();
    let n = 10_000;
    let vec_ens = simulate_vector_ensemble([0.0, 0.0], &cov, 2.0, &grid, n, 8).unwrap();
    let last = grid.steps();
    let sums: Vec<f64> = vec_ens.iter().map(|t| t.values[last][0] + t.values[last][1]).collect();
    let tau = grid.taus()[last];
    let want = cov.total_variance() * tau * tau;
    assert!((sample_var(&sums) / want - 1.0).abs() <= 0.05);
}

#[test]
fn one_step_increment_covariance() {
    let cov = CovMatrix2::new(4.0, 3.0, 2.0);
    let l = cholesky2(&cov).unwrap();
    assert!((l.l00 - 2.0).abs() < 1e-15 && (l.l10 - 1.0).abs() < 1e-15 && (l.l11 - 2f64.sqrt()).abs() < 1e-15);
    let (tau, next) = (0.8, 0.79);
    let grid = TauGrid::from_taus(vec![tau, next]).unwrap();
    let n = 40_000;
    let mu = [1.0, -1.0];
    let mut inc = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = CounterRng::new(21, &[i as u64]);
        let t = simulate_vector_reverse(mu, &cov, 2.0, &grid, mu, &mut rng).unwrap();
        inc.push([t.values[1][0] - mu[0], t.values[1][1] - mu[1]]);
    }
    let dtau = tau - next;
    let want = [[4.0, 2.0], [2.0, 3.0]].map(|r| r.map(|s| 2.0 * tau * s * dtau));
    for a in 0..2 {
        for b in 0..2 {
            let got = inc.iter().map(|d| d[a] * d[b]).sum::<f64>() / n as f64;
            assert!((got / want[a][b] - 1.0).abs() <= 0.05, "({a},{b}) {got} vs {}", want[a][b]);
        }
    }
}

#[test]
fn zero_covariance_is_deterministic() {
    let grid = TauGrid::new(1.0, 0.1, 50, GridSpacing::Linear).unwrap();
    let mut r1 = CounterRng::new(1, &[]);
    let mut r2 = CounterRng::new(2, &[]);
    let cov = CovMatrix2::new(0.0, 0.0, 0.0);
    let a = simulate_vector_reverse([0.0, 1.0], &cov, 2.0, &grid, [1.0, 2.0], &mut r1).unwrap();
    let b = simulate_vector_reverse([0.0, 1.0], &cov, 2.0, &grid, [1.0, 2.0], &mut r2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn drift_quantiles_are_tau_independent() {
    let params = SdeParams::standard(2.0, 1.0).unwrap();
    let q = drift_boundedness_stat(&params, &[1.0, 0.1, 0.01], 100_000, 5).unwrap();
    let exact_mean = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    for row in &q {
        assert!((4.6..=5.8).contains(&row.q99), "{row:?}");
        assert!(row.q99 <= drift_q99_bound(&params, 0.05));
        assert!((row.mean_abs / exact_mean - 1.0).abs() <= 0.05, "{row:?}");
    }
    let zero = SdeParams::standard(2.0, 0.0).unwrap();
    for row in drift_boundedness_stat(&zero, &[1.0, 0.01], 100, 5).unwrap() {
        assert_eq!(row.max, 0.0);
    }
}

#[test]
fn ensembles_ignore_thread_count() {
    let params = SdeParams::standard(0.0, 1.0).unwrap();
    let grid = TauGrid::new(1.0, 0.1, 20, GridSpacing::Geometric).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_ensemble(&params, &grid, 64, InitMode::ForwardMarginal, 9))
    };
    assert_eq!(run(1), run(3));
}
