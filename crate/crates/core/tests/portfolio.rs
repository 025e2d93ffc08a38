use dcs_core::dcs::Estimator;
use dcs_core::ingest::ReturnPanel;
use dcs_core::portfolio::{
    gmv_weights, kkt_residual, performance_metrics, rolling_backtest, sparse_precision, stars_select, BacktestConfig,
    PortfolioEstimator, Sparsity, StarsConfig, TurnoverMode,
};
use dcs_core::ranks::{CorrMatrix, CorrMethod};
use dcs_core::rng::substream;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn normal_matrix(t: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = substream(seed, "normal-matrix", 0);
    DMatrix::from_fn(t, p, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        0.01 * v
    })
}

fn ar1_corr(p: usize, rho: f64) -> CorrMatrix {
    let m = DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()));
    CorrMatrix::new(m, CorrMethod::Pearson).unwrap()
}

fn spd(p: usize, seed: u64) -> DMatrix<f64> {
    let a = normal_matrix(p + 5, p, seed) * 100.0;
    a.transpose() * &a / (p + 5) as f64 + DMatrix::identity(p, p) * 0.1
}

#[test]
fn gmv_weights_sum_to_one() {
    for seed in 0..20 {
        let w = gmv_weights(&spd(6, seed)).unwrap();
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn lasso_without_penalty_is_the_inverse() {
    let r = ar1_corr(6, 0.5);
    let theta = sparse_precision(&r, 0.0).unwrap();
    let inv = r.values().clone().try_inverse().unwrap();
    assert!((theta - inv).abs().max() < 1e-6);
}

#[test]
fn lasso_solution_satisfies_optimality_conditions() {
    for (p, rho) in [(5, 0.3), (8, 0.6), (12, 0.8)] {
        let r = ar1_corr(p, rho);
        for lambda in [0.01, 0.05, 0.2] {
            let theta = sparse_precision(&r, lambda).unwrap();
            let res = kkt_residual(&theta, r.values(), lambda).unwrap();
            assert!(res < 1e-6, "p = {p}, lambda = {lambda}: residual {res}");
        }
    }
}

#[test]
fn large_penalty_gives_diagonal_precision() {
    let r = ar1_corr(5, 0.5);
    let theta = sparse_precision(&r, 0.9).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            if i != j {
                assert_eq!(theta[(i, j)], 0.0);
            }
        }
    }
}

#[test]
fn stars_on_independent_data_selects_sparse_graph() {
    let panel = normal_matrix(500, 10, 3);
    let res = stars_select(&panel, &StarsConfig::new(1)).unwrap();
    let r = dcs_core::ranks::skeptic_matrix(&panel, CorrMethod::Tau).unwrap();
    let theta = sparse_precision(&r, res.lambda).unwrap();
    let (mut edges, mut pairs) = (0, 0);
    for j in 1..10 {
        for i in 0..j {
            pairs += 1;
            if theta[(i, j)] != 0.0 {
                edges += 1;
            }
        }
    }
    assert!((edges as f64) < 0.05 * pairs as f64 + 1e-12, "{edges} of {pairs} edges");
}

#[test]
fn equal_weight_backtest_holds_one_over_p() {
    let panel = ReturnPanel::from_matrix(normal_matrix(700, 4, 5)).unwrap();
    let ledger = rolling_backtest(&panel, &BacktestConfig::new(300, 30, PortfolioEstimator::EqualWeight)).unwrap();
    assert_eq!(ledger.returns.len(), 400);
    assert_eq!(ledger.rebalances.len(), 14);
    for r in &ledger.rebalances {
        assert!(r.weights.iter().all(|&w| w == 0.25));
    }
    let perf = performance_metrics(&ledger, TurnoverMode::Raw).unwrap();
    assert_eq!(perf.to, 0.0);
    assert_eq!(perf.n_days, 400);
}

#[test]
fn ledger_covers_every_out_of_sample_day() {
    let panel = ReturnPanel::from_matrix(normal_matrix(537, 3, 6)).unwrap();
    let cfg = BacktestConfig::new(250, 40, PortfolioEstimator::Model(Estimator::Dcc));
    let ledger = rolling_backtest(&panel, &cfg).unwrap();
    assert_eq!(ledger.returns.len(), 537 - 250);
    assert_eq!(ledger.dates.first(), Some(&panel.dates[250]));
    assert_eq!(ledger.rebalances.len(), (537 - 250usize).div_ceil(40));
    let mut csv = Vec::new();
    ledger.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 537 - 250 + 1);
}

#[test]
fn rank_model_on_independent_assets_is_near_equal_weight() {
    let p = 5;
    let panel = ReturnPanel::from_matrix(normal_matrix(1300, p, 7)).unwrap();
    let cfg = BacktestConfig::new(500, 50, PortfolioEstimator::Model(Estimator::DcsTau));
    let ledger = rolling_backtest(&panel, &cfg).unwrap();
    assert_eq!(ledger.failures(), 0);
    let k = ledger.rebalances.len() as f64;
    for j in 0..p {
        let avg = ledger.rebalances.iter().map(|r| r.weights[j]).sum::<f64>() / k;
        assert!((avg - 1.0 / p as f64).abs() < 0.05, "asset {j}: {avg}");
    }
    for r in &ledger.rebalances {
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn sparse_backtest_records_penalty() {
    let panel = ReturnPanel::from_matrix(normal_matrix(400, 4, 8)).unwrap();
    let mut cfg = BacktestConfig::new(300, 50, PortfolioEstimator::Model(Estimator::DcsRho));
    cfg.sparsity = Sparsity::Lambda(0.1);
    let ledger = rolling_backtest(&panel, &cfg).unwrap();
    assert!(ledger.rebalances.iter().all(|r| r.lambda == Some(0.1)));
}

#[test]
fn short_windows_are_rejected() {
    let panel = ReturnPanel::from_matrix(normal_matrix(400, 3, 9)).unwrap();
    assert!(rolling_backtest(&panel, &BacktestConfig::new(100, 10, PortfolioEstimator::EqualWeight)).is_err());
    assert!(rolling_backtest(&panel, &BacktestConfig::new(395, 10, PortfolioEstimator::EqualWeight)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gmv_is_minimal_among_budget_perturbations(
        seed in 0u64..1000,
        d in prop::collection::vec(-0.5f64..0.5, 5),
    ) {
        let h = spd(5, seed);
        let w = gmv_weights(&h).unwrap();
        let shift = d.iter().sum::<f64>() / 5.0;
        let v: Vec<f64> = w.weights.iter().zip(&d).map(|(a, b)| a + b - shift).collect();
        let var = |x: &[f64]| {
            let x = nalgebra::DVector::from_column_slice(x);
            (x.transpose() * &h * &x)[(0, 0)]
        };
        prop_assert!(var(&w.weights) <= var(&v) + 1e-12 * var(&v).abs());
    }
}
