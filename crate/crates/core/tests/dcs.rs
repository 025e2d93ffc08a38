use dcs_core::dcs::{
    composite_loglik, covariance_series, dcs_recursion, estimate_phi, fit_estimator, model_loglik_aic_bic, DcsParams,
    Estimator,
};
use dcs_core::linalg;
use dcs_core::ranks::{CorrMatrix, CorrMethod, ScorePanel};
use dcs_core::rng::substream;
use dcs_core::simulate::{simulate_panel, SimConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn iid_scores(t: usize, p: usize, seed: u64) -> ScorePanel {
    let mut rng = substream(seed, "iid-scores", 0);
    let m = DMatrix::from_fn(t, p, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v
    });
    ScorePanel::raw(&m).unwrap()
}

#[test]
fn time_average_of_q_approaches_target() {
    let p = 4;
    let qbar = CorrMatrix::identity(p, CorrMethod::Pearson);
    let params = DcsParams::new(0.05, 0.90).unwrap();
    let gap = |t: usize| {
        let path = dcs_recursion(&qbar, &params, &iid_scores(t, p, 5)).unwrap();
        let mean = path.q.iter().fold(DMatrix::zeros(p, p), |acc, q| acc + q) / t as f64;
        linalg::max_abs_diff(&mean, qbar.values())
    };
    assert!(gap(16_000) < gap(500));
    assert!(gap(16_000) < 0.05);
}

#[test]
fn fit_on_clean_simulation_is_sensible() {
    let mut cfg = SimConfig::new(6, 2000, 21);
    cfg.nu_range = (30, 30);
    let panel = simulate_panel(&cfg).unwrap();
    for est in Estimator::ALL {
        let m = fit_estimator(&panel, est, false).unwrap();
        assert!((0.005..0.05).contains(&m.params.alpha), "{est}: {:?}", m.params);
        assert!((0.85..0.999).contains(&m.params.beta), "{est}: {:?}", m.params);
        let h = m.forecast_covariance().unwrap();
        assert!(h.clone().cholesky().is_some());
    }
}

#[test]
fn estimated_phi_beats_nearby_points() {
    let mut cfg = SimConfig::new(5, 1500, 4);
    cfg.nu_range = (30, 30);
    let panel = simulate_panel(&cfg).unwrap();
    let m = fit_estimator(&panel, Estimator::DcsTau, false).unwrap();
    let best = composite_loglik(&m.params, &m.qbar, &m.score_panel).unwrap();
    for (da, db) in [(0.003, 0.0), (-0.003, 0.0), (0.0, 0.005), (0.0, -0.005)] {
        if let Ok(p) = DcsParams::new(m.params.alpha + da, m.params.beta + db) {
            assert!(composite_loglik(&p, &m.qbar, &m.score_panel).unwrap() >= best - 1e-9);
        }
    }
    let again = estimate_phi(&m.qbar, &m.score_panel).unwrap();
    assert_eq!(again, m.params);
}

#[test]
fn covariance_series_and_criteria() {
    let panel = simulate_panel(&SimConfig::new(4, 600, 8)).unwrap();
    let m = fit_estimator(&panel, Estimator::DcsRho, false).unwrap();
    let h = covariance_series(&m).unwrap();
    assert_eq!(h.h.len(), 600);
    for ht in &h.h {
        assert!(linalg::is_symmetric(ht, 0.0));
        assert!(linalg::min_eigenvalue(ht) > -1e-12);
    }
    let c = model_loglik_aic_bic(&m).unwrap();
    assert_eq!(c.n_params, 3 * 4 + 2);
    assert!(c.bic > c.aic);
    assert!((c.loglik - c.volatility_loglik - c.correlation_loglik).abs() < 1e-6 * c.loglik.abs());
}

#[test]
fn short_panels_are_rejected() {
    let panel = simulate_panel(&SimConfig::new(3, 150, 1)).unwrap();
    assert!(fit_estimator(&panel, Estimator::DcsTau, false).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_correlation_is_valid(
        alpha in 0.0f64..0.3,
        beta in 0.0f64..0.69,
        seed in 0u64..1000,
        rho in -0.3f64..0.9,
    ) {
        let p = 3;
        let target = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
        let qbar = CorrMatrix::new(target, CorrMethod::Tau).unwrap();
        let params = DcsParams::new(alpha, beta).unwrap();
        let path = dcs_recursion(&qbar, &params, &iid_scores(120, p, seed)).unwrap();
        for r in &path.r {
            prop_assert!(r.diagonal().iter().all(|d| (d - 1.0).abs() < 1e-12));
            prop_assert!(r.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }
}
