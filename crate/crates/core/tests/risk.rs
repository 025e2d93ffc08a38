use dcs_core::risk::{
    christoffersen_cc, coverage_report, engle_dq, kupiec_uc, normal_multipliers, portfolio_risk_path, var_es_normal,
};
use dcs_core::rng::substream;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_series(n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "risk-series", 0);
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            sd * v
        })
        .collect()
}

#[test]
fn kupiec_matches_closed_form() {
    let mut v = vec![false; 1000];
    v.iter_mut().take(80).for_each(|x| *x = true);
    let (n, x, a) = (1000.0f64, 80.0f64, 0.05f64);
    let expected = -2.0 * ((n - x) * (1.0 - a).ln() + x * a.ln() - (n - x) * (1.0 - x / n).ln() - x * (x / n).ln());
    let r = kupiec_uc(&v, a).unwrap();
    assert!((r.statistic - expected).abs() < 1e-10);
    assert!(r.p_value < 1e-3);
}

#[test]
fn kupiec_without_violations_is_finite() {
    let r = kupiec_uc(&[false; 500], 0.01).unwrap();
    assert!((r.statistic - (-2.0 * 500.0 * 0.99f64.ln())).abs() < 1e-10);
}

#[test]
fn expected_shortfall_exceeds_var() {
    for alpha in [0.01, 0.025, 0.05, 0.1] {
        let (kv, ke) = normal_multipliers(alpha).unwrap();
        assert!(ke > kv && kv > 0.0);
    }
    let (var, es) = var_es_normal(&[0.01, 0.02], 0.05).unwrap();
    assert!((var[0] - 0.016448536).abs() < 1e-8);
    assert!((es[1] - 0.02 * 2.062713).abs() < 1e-6);
}

#[test]
fn risk_path_has_matching_lengths() {
    let r = normal_series(600, 0.01, 1);
    let path = portfolio_risk_path(&r, 0.05).unwrap();
    assert_eq!(path.var.len(), 600);
    assert_eq!(path.es.len(), 600);
    assert!(path.var.iter().zip(&path.es).all(|(v, e)| e > v));
    assert!(path.es_failure_rate() <= path.failure_rate());
    let mut out = Vec::new();
    path.write_csv(&mut out, None).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 601);
}

#[test]
fn positive_returns_never_violate() {
    let r: Vec<f64> = normal_series(400, 0.01, 2).iter().map(|v| v.abs() + 1e-6).collect();
    let path = portfolio_risk_path(&r, 0.01).unwrap();
    assert_eq!(path.failure_rate(), 0.0);
}

#[test]
fn correct_model_is_rarely_rejected() {
    let mut rejections = 0;
    for seed in 0..40 {
        let r = normal_series(1000, 0.01, 100 + seed);
        let var = vec![0.01 * 1.6448536269514722; 1000];
        let viol: Vec<bool> = r.iter().zip(&var).map(|(x, v)| -x > *v).collect();
        let rep = coverage_report(&viol, &var, 0.05, 4).unwrap();
        if rep.uc.rejects(0.01) {
            rejections += 1;
        }
    }
    assert!(rejections <= 3, "{rejections} of 40");
}

#[test]
fn clustered_hits_fail_independence() {
    let mut v = vec![false; 1000];
    for block in 0..10 {
        for k in 0..5 {
            v[block * 100 + k] = true;
        }
    }
    let cc = christoffersen_cc(&v, 0.05).unwrap();
    assert!(cc.p_value < 1e-3);
    let var = vec![1.0; 1000];
    assert!(engle_dq(&v, &var, 0.05, 4).unwrap().p_value < 1e-3);
}

#[test]
fn too_few_observations_are_rejected() {
    assert!(kupiec_uc(&[false; 10], 0.05).is_err());
    assert!(portfolio_risk_path(&normal_series(100, 0.01, 3), 0.05).is_err());
    assert!(kupiec_uc(&[false; 100], 1.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conditional_coverage_dominates_unconditional(seed in 0u64..10_000, rate in 0.01f64..0.3) {
        let mut rng = substream(seed, "hits", 0);
        let v: Vec<bool> = (0..300).map(|_| rng.random::<f64>() < rate).collect();
        let uc = kupiec_uc(&v, 0.05).unwrap();
        let cc = christoffersen_cc(&v, 0.05).unwrap();
        prop_assert!(cc.statistic >= uc.statistic - 1e-9);
        prop_assert!(uc.statistic >= 0.0);
        prop_assert!((0.0..=1.0).contains(&uc.p_value));
    }
}
