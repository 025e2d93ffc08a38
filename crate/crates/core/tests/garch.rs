use dcs_core::garch::{filter_volatility, fit_garch11, GarchParams};
use dcs_core::rng::substream;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn simulate_garch(params: &GarchParams, t: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "garch-sim", 0);
    let mut var = params.unconditional_variance();
    let mut prev = 0.0;
    (0..t)
        .map(|s| {
            if s > 0 {
                var = params.step(prev, var);
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            prev = var.sqrt() * z;
            prev
        })
        .collect()
}

fn truth() -> GarchParams {
    GarchParams::new(0.05, 0.08, 0.90, 0.0, 1.0).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n.is_multiple_of(2) {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    } else {
        v[n / 2]
    }
}

#[test]
fn refit_error_shrinks_when_sample_doubles() {
    let p = truth();
    let err = |t: usize| {
        median(
            (0..20)
                .map(|seed| {
                    let fit = fit_garch11(&simulate_garch(&p, t, seed), false).unwrap();
                    (fit.params.alpha1 - p.alpha1).abs() + (fit.params.beta1 - p.beta1).abs()
                })
                .collect(),
        )
    };
    let (e1, e2) = (err(5000), err(10_000));
    assert!(e2 < e1, "median error {e2} at T = 10000 vs {e1} at T = 5000");
}

#[test]
fn leverage_fit_recovers_asymmetry() {
    let p = GarchParams::new(0.05, 0.03, 0.88, 0.12, 1.0).unwrap();
    let x = simulate_garch(&p, 8000, 3);
    let fit = fit_garch11(&x, true).unwrap();
    assert!(fit.params.gamma1 > 0.04, "gamma = {}", fit.params.gamma1);
    assert!((fit.params.persistence() - p.persistence()).abs() < 0.05);
}

#[test]
fn filtering_is_bit_identical() {
    let x = simulate_garch(&truth(), 500, 9);
    let a = filter_volatility(&truth(), &x).unwrap();
    let b = filter_volatility(&truth(), &x).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fit_never_worse_than_start(seed in 0u64..10_000, leverage in any::<bool>()) {
        let x = simulate_garch(&truth(), 400, seed);
        let fit = fit_garch11(&x, leverage).unwrap();
        prop_assert!(fit.loglik >= fit.start_loglik);
        prop_assert!(fit.sigma.iter().all(|s| s.is_finite() && *s > 0.0));
        prop_assert!(fit.params.persistence() < 1.0);
    }

    #[test]
    fn filtered_volatility_is_positive(
        omega in 1e-6f64..1.0,
        alpha in 0.0f64..0.3,
        beta in 0.0f64..0.69,
        xs in prop::collection::vec(-5.0f64..5.0, 1..200),
    ) {
        let p = GarchParams::new(omega, alpha, beta, 0.0, 1.0).unwrap();
        let s = filter_volatility(&p, &xs).unwrap();
        prop_assert_eq!(s.len(), xs.len());
        prop_assert!(s.iter().all(|v| *v > 0.0 && v.is_finite()));
    }
}
