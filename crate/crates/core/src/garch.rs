//! Univariate GARCH(1,1) and GJR-GARCH(1,1) fitted by Gaussian
//! quasi-maximum likelihood.
//!
//! The variance recursion is
//!
//! ```text
//! σ²_1 = init_var
//! σ²_t = ω + (α₁ + γ₁·1[x_{t-1} < 0]) x²_{t-1} + β₁ σ²_{t-1},   t ≥ 2
//! ```
//!
//! with `γ₁ = 0` for the symmetric model. Estimation runs Nelder-Mead over an
//! unconstrained reparameterisation: `ln ω` and a logistic total persistence
//! `α₁ + β₁ + γ₁/2 ∈ (0, 1)` split across the coefficients by a softmax, so
//! every trial point is positive and covariance stationary.

use serde::{Deserialize, Serialize};

use crate::error::{DcsError, Result};
use crate::optim::{logistic, logit, nelder_mead, NelderMeadConfig};

/// Minimum series length accepted by [`fit_garch11`].
pub const MIN_FIT_LEN: usize = 100;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha1: f64,
    pub beta1: f64,
    /// Leverage coefficient; zero for plain GARCH.
    pub gamma1: f64,
    /// Pre-sample variance σ²_1.
    pub init_var: f64,
}

impl GarchParams {
    pub fn new(omega: f64, alpha1: f64, beta1: f64, gamma1: f64, init_var: f64) -> Result<Self> {
        let p = Self {
            omega,
            alpha1,
            beta1,
            gamma1,
            init_var,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.omega, self.alpha1, self.beta1, self.gamma1, self.init_var];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DcsError::input("GARCH parameters must be finite"));
        }
        if self.omega <= 0.0 {
            return Err(DcsError::input(format!("omega must be > 0, got {}", self.omega)));
        }
        if self.alpha1 < 0.0 || self.beta1 < 0.0 || self.gamma1 < 0.0 {
            return Err(DcsError::input("GARCH coefficients must be non-negative"));
        }
        if self.persistence() >= 1.0 {
            return Err(DcsError::input(format!(
                "alpha1 + beta1 + gamma1/2 = {} violates covariance stationarity",
                self.persistence()
            )));
        }
        if self.init_var <= 0.0 {
            return Err(DcsError::input("init_var must be > 0"));
        }
        Ok(())
    }

    pub fn persistence(&self) -> f64 {
        self.alpha1 + self.beta1 + 0.5 * self.gamma1
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.persistence())
    }

    /// One recursion step: σ²_{t+1} from x_t and σ²_t.
    #[inline]
    pub fn step(&self, x_prev: f64, var_prev: f64) -> f64 {
        let arch = if x_prev < 0.0 {
            self.alpha1 + self.gamma1
        } else {
            self.alpha1
        };
        self.omega + arch * x_prev * x_prev + self.beta1 * var_prev
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GarchFit {
    pub params: GarchParams,
    /// Conditional standard deviation σ_t, same length as the input.
    pub sigma: Vec<f64>,
    /// Standardised residuals x_t / σ_t.
    pub residuals: Vec<f64>,
    /// Gaussian log-likelihood at `params`.
    pub loglik: f64,
    /// Log-likelihood at the optimizer's starting point.
    pub start_loglik: f64,
    /// Last observation of the fitted series, kept for forecasting.
    last_obs: f64,
}

impl GarchFit {
    /// Variance forecast for the period after the sample.
    pub fn next_variance(&self) -> f64 {
        let last_sigma = *self.sigma.last().expect("fit has a non-empty path");
        self.params.step(self.last_obs, last_sigma * last_sigma)
    }
}

/// Conditional standard-deviation path for `series` under `params`.
pub fn filter_volatility(params: &GarchParams, series: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    check_finite(series)?;
    Ok(variance_path(params, series).into_iter().map(f64::sqrt).collect())
}

fn variance_path(params: &GarchParams, series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut var = params.init_var;
    for (t, _) in series.iter().enumerate() {
        if t > 0 {
            var = params.step(series[t - 1], var);
        }
        out.push(var);
    }
    out
}

/// Elementwise `series / sigma`.
pub fn standardize(series: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    if series.len() != sigma.len() {
        return Err(DcsError::input(format!(
            "length mismatch: series {} vs sigma {}",
            series.len(),
            sigma.len()
        )));
    }
    series
        .iter()
        .zip(sigma)
        .enumerate()
        .map(|(t, (&x, &s))| {
            if !(s > 0.0) || !s.is_finite() {
                return Err(DcsError::numeric(format!("sigma[{t}] = {s} is not positive")));
            }
            let z = x / s;
            if z.is_finite() {
                Ok(z)
            } else {
                Err(DcsError::numeric(format!("non-finite residual at {t}")))
            }
        })
        .collect()
}

/// Gaussian quasi log-likelihood of `series` under `params`.
pub fn gaussian_loglik(params: &GarchParams, series: &[f64]) -> f64 {
    let mut ll = 0.0;
    let mut var = params.init_var;
    for (t, &x) in series.iter().enumerate() {
        if t > 0 {
            var = params.step(series[t - 1], var);
        }
        if !(var > 0.0) {
            return f64::NEG_INFINITY;
        }
        ll -= 0.5 * (LN_2PI + var.ln() + x * x / var);
    }
    ll
}

fn check_finite(series: &[f64]) -> Result<()> {
    if let Some(t) = series.iter().position(|v| !v.is_finite()) {
        return Err(DcsError::input(format!("non-finite value at index {t}")));
    }
    Ok(())
}

/// Maps unconstrained optimizer coordinates to admissible parameters.
struct Reparam {
    leverage: bool,
    init_var: f64,
}

impl Reparam {
    fn decode(&self, theta: &[f64]) -> GarchParams {
        let omega = theta[0].exp();
        let total = logistic(theta[1]);
        let (alpha1, beta1, gamma1) = if self.leverage {
            let ea = theta[2].exp();
            let eg = theta[3].exp();
            let z = 1.0 + ea + eg;
            (total * ea / z, total / z, 2.0 * total * eg / z)
        } else {
            let share = logistic(theta[2]);
            (total * share, total * (1.0 - share), 0.0)
        };
        GarchParams {
            omega,
            alpha1,
            beta1,
            gamma1,
            init_var: self.init_var,
        }
    }

    fn encode(&self, p: &GarchParams) -> Vec<f64> {
        let total = p.persistence();
        if self.leverage {
            let half_g = 0.5 * p.gamma1;
            vec![
                p.omega.ln(),
                logit(total),
                (p.alpha1 / p.beta1).ln(),
                (half_g / p.beta1).ln(),
            ]
        } else {
            vec![p.omega.ln(), logit(total), logit(p.alpha1 / total)]
        }
    }
}

/// Fit a GARCH(1,1) (or GJR-GARCH(1,1) when `leverage`) by Gaussian QML.
pub fn fit_garch11(series: &[f64], leverage: bool) -> Result<GarchFit> {
    check_finite(series)?;
    let n = series.len();
    if n < MIN_FIT_LEN {
        return Err(DcsError::input(format!(
            "GARCH fit needs at least {MIN_FIT_LEN} observations, got {n}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(DcsError::input("series has zero variance"));
    }

    let reparam = Reparam {
        leverage,
        init_var: var,
    };
    let start = GarchParams {
        omega: 0.05 * var,
        alpha1: 0.05,
        beta1: 0.90,
        gamma1: if leverage { 0.02 } else { 0.0 },
        init_var: var,
    };
    let start_loglik = gaussian_loglik(&start, series);
    // scale-free objective so the relative tolerance means the same thing
    // for every series
    let objective = |theta: &[f64]| -gaussian_loglik(&reparam.decode(theta), series) / n as f64;
    let cfg = NelderMeadConfig {
        max_iter: 2000,
        ftol: 1e-8,
        xtol: 1e-9,
        step: 0.5,
        restarts: 2,
    };
    let res = nelder_mead(objective, &reparam.encode(&start), &cfg);
    let params = reparam.decode(&res.x);
    if !res.converged || !res.fx.is_finite() {
        return Err(DcsError::Convergence {
            message: format!("GARCH fit did not converge after {} iterations", res.iterations),
            best: vec![params.omega, params.alpha1, params.beta1, params.gamma1],
        });
    }
    let mut loglik = -res.fx * n as f64;
    let params = if loglik < start_loglik {
        loglik = start_loglik;
        start
    } else {
        params
    };

    let sigma: Vec<f64> = variance_path(&params, series).into_iter().map(f64::sqrt).collect();
    let residuals = standardize(series, &sigma)?;
    Ok(GarchFit {
        params,
        sigma,
        residuals,
        loglik,
        start_loglik,
        last_obs: series[n - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_variance_filter() {
        let p = GarchParams::new(1.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        let s = filter_volatility(&p, &[0.3, -2.0, 5.0, 0.0]).unwrap();
        assert!(s.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn hand_recursion_second_step() {
        let p = GarchParams::new(0.1, 0.0, 0.5, 0.0, 0.2).unwrap();
        let s = filter_volatility(&p, &[1.0, 1.0, 1.0]).unwrap();
        assert!((s[0] * s[0] - 0.2).abs() < 1e-15);
        assert!((s[1] * s[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn leverage_term_only_on_negative_shocks() {
        let p = GarchParams::new(0.1, 0.1, 0.5, 0.2, 1.0).unwrap();
        let up = filter_volatility(&p, &[1.0, 0.0]).unwrap();
        let down = filter_volatility(&p, &[-1.0, 0.0]).unwrap();
        assert!((up[1].powi(2) - (0.1 + 0.1 + 0.5)).abs() < 1e-12);
        assert!((down[1].powi(2) - (0.1 + 0.3 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(GarchParams::new(0.0, 0.1, 0.8, 0.0, 1.0).is_err());
        assert!(GarchParams::new(0.1, -0.1, 0.8, 0.0, 1.0).is_err());
        assert!(GarchParams::new(0.1, 0.1, 0.85, 0.2, 1.0).is_err());
        assert!(GarchParams::new(0.1, 0.1, 0.8, 0.0, 0.0).is_err());
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(&[1.0, -2.0], &[2.0, 4.0]).unwrap(), vec![0.5, -0.5]);
        assert_eq!(standardize(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(standardize(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            standardize(&[1.0], &[0.0]),
            Err(DcsError::Numeric(_))
        ));
        assert!(matches!(standardize(&[1.0], &[1.0, 2.0]), Err(DcsError::Input(_))));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_garch11(&[0.0; 200], false), Err(DcsError::Input(_))));
        assert!(matches!(fit_garch11(&[1.0; 50], false), Err(DcsError::Input(_))));
        let mut x: Vec<f64> = (0..200).map(|i| (i as f64).sin()).collect();
        x[17] = f64::NAN;
        assert!(matches!(fit_garch11(&x, false), Err(DcsError::Input(_))));
    }

    #[test]
    fn reparam_roundtrip() {
        let p = GarchParams::new(0.02, 0.07, 0.85, 0.06, 1.3).unwrap();
        let r = Reparam {
            leverage: true,
            init_var: 1.3,
        };
        let q = r.decode(&r.encode(&p));
        assert!((q.omega - p.omega).abs() < 1e-12);
        assert!((q.alpha1 - p.alpha1).abs() < 1e-12);
        assert!((q.beta1 - p.beta1).abs() < 1e-12);
        assert!((q.gamma1 - p.gamma1).abs() < 1e-12);
    }
}
