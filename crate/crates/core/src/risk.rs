//! Normal VaR and expected shortfall from GJR-GARCH portfolio volatility,
//! and the unconditional-coverage, conditional-coverage and dynamic-quantile
//! backtests.

use std::io::Write;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal};

use crate::diagnostics::TestResult;
use crate::error::{DcsError, Result};
use crate::garch::{fit_garch11, GarchParams};

/// Default number of lagged hits in the dynamic-quantile regression.
pub const DEFAULT_DQ_LAGS: usize = 4;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(DcsError::input(format!("coverage level {alpha} outside (0, 0.5)")));
    }
    Ok(())
}

/// VaR and ES multipliers for a unit-variance normal: `(-z_α, φ(z_α)/α)`.
pub fn normal_multipliers(alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    let n = Normal::standard();
    let z = n.inverse_cdf(alpha);
    Ok((-z, n.pdf(z) / alpha))
}

/// VaR and ES (positive loss magnitudes) for each volatility in `sigma`.
pub fn var_es_normal(sigma: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (kv, ke) = normal_multipliers(alpha)?;
    if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(DcsError::input(format!("invalid volatility {s}")));
    }
    Ok((sigma.iter().map(|s| s * kv).collect(), sigma.iter().map(|s| s * ke).collect()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskPath {
    pub alpha: f64,
    pub returns: Vec<f64>,
    pub sigma: Vec<f64>,
    pub var: Vec<f64>,
    pub es: Vec<f64>,
    /// `-r_t > VaR_t`.
    pub violations: Vec<bool>,
    /// `-r_t > ES_t`.
    pub es_violations: Vec<bool>,
    pub garch: GarchParams,
}

impl RiskPath {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn failure_rate(&self) -> f64 {
        self.violations.iter().filter(|&&v| v).count() as f64 / self.len() as f64
    }

    pub fn es_failure_rate(&self) -> f64 {
        self.es_violations.iter().filter(|&&v| v).count() as f64 / self.len() as f64
    }

    /// CSV with columns date, return, var, es, violation, es_violation.
    /// Synthetic indices are used when `dates` is `None`.
    pub fn write_csv<W: Write>(&self, out: W, dates: Option<&[NaiveDate]>) -> Result<()> {
        if let Some(d) = dates {
            if d.len() != self.len() {
                return Err(DcsError::input("date index length does not match the risk path"));
            }
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "return", "var", "es", "violation", "es_violation"])?;
        for t in 0..self.len() {
            let date = dates.map_or_else(|| t.to_string(), |d| d[t].to_string());
            w.write_record([
                date,
                format!("{:.10}", self.returns[t]),
                format!("{:.10}", self.var[t]),
                format!("{:.10}", self.es[t]),
                u8::from(self.violations[t]).to_string(),
                u8::from(self.es_violations[t]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fit a GJR-GARCH(1,1) to the portfolio returns and derive one-step VaR
/// and ES paths with their violation indicators.
pub fn portfolio_risk_path(returns: &[f64], alpha: f64) -> Result<RiskPath> {
    check_alpha(alpha)?;
    if returns.len() < 200 {
        return Err(DcsError::input("risk path needs at least 200 returns"));
    }
    let fit = fit_garch11(returns, true)?;
    let (var, es) = var_es_normal(&fit.sigma, alpha)?;
    let violations = returns.iter().zip(&var).map(|(r, v)| -r > *v).collect();
    let es_violations = returns.iter().zip(&es).map(|(r, e)| -r > *e).collect();
    Ok(RiskPath {
        alpha,
        returns: returns.to_vec(),
        sigma: fit.sigma,
        var,
        es,
        violations,
        es_violations,
        garch: fit.params,
    })
}

/// `a ln b` with the convention `0 ln 0 = 0`.
fn xlogy(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

fn bernoulli_loglik(n0: f64, n1: f64, p: f64) -> f64 {
    xlogy(n0, 1.0 - p) + xlogy(n1, p)
}

fn chi2_sf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df).map_or(f64::NAN, |d| d.sf(x))
}

fn check_violations(violations: &[bool], alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    if violations.len() < 50 {
        return Err(DcsError::input("coverage tests need at least 50 observations"));
    }
    Ok(())
}

fn uc_statistic(violations: &[bool], alpha: f64) -> f64 {
    let n = violations.len() as f64;
    let x = violations.iter().filter(|&&v| v).count() as f64;
    let lr = -2.0 * (bernoulli_loglik(n - x, x, alpha) - bernoulli_loglik(n - x, x, x / n));
    lr.max(0.0)
}

/// Kupiec unconditional-coverage likelihood ratio, χ²₁.
pub fn kupiec_uc(violations: &[bool], alpha: f64) -> Result<TestResult> {
    check_violations(violations, alpha)?;
    let lr = uc_statistic(violations, alpha);
    Ok(TestResult {
        statistic: lr,
        df: Some(1.0),
        note: None,
        p_value: chi2_sf(lr, 1.0),
    })
}

/// Christoffersen conditional coverage: the UC ratio plus the
/// first-order Markov independence ratio, χ²₂.
pub fn christoffersen_cc(violations: &[bool], alpha: f64) -> Result<TestResult> {
    check_violations(violations, alpha)?;
    let mut n = [[0.0f64; 2]; 2];
    for w in violations.windows(2) {
        n[usize::from(w[0])][usize::from(w[1])] += 1.0;
    }
    let pi01 = n[0][1] / (n[0][0] + n[0][1]).max(1.0);
    let pi11 = n[1][1] / (n[1][0] + n[1][1]).max(1.0);
    let pi = (n[0][1] + n[1][1]) / (n[0][0] + n[0][1] + n[1][0] + n[1][1]);
    let restricted = bernoulli_loglik(n[0][0] + n[1][0], n[0][1] + n[1][1], pi);
    let unrestricted = bernoulli_loglik(n[0][0], n[0][1], pi01) + bernoulli_loglik(n[1][0], n[1][1], pi11);
    let lr_ind = (-2.0 * (restricted - unrestricted)).max(0.0);
    let lr = uc_statistic(violations, alpha) + lr_ind;
    Ok(TestResult {
        statistic: lr,
        df: Some(2.0),
        note: None,
        p_value: chi2_sf(lr, 2.0),
    })
}

/// Dynamic-quantile test on a centred hit series `hit_t = I_t - α`.
///
/// Regresses `hit_t` on a constant, `lags` lagged hits and each column of
/// `extra` at time t; `DQ = b'X'Xb / (α(1-α))` is χ² with as many degrees of
/// freedom as regressors. A nearly singular `X'X` is ridged with a relative
/// 1e-8 jitter and flagged in the note.
pub fn engle_dq_hits(hits: &[f64], extra: &[&[f64]], alpha: f64, lags: usize) -> Result<TestResult> {
    check_alpha(alpha)?;
    let n = hits.len();
    if n < lags + 50 {
        return Err(DcsError::input(format!("DQ test needs at least lags + 50 = {} observations", lags + 50)));
    }
    if extra.iter().any(|e| e.len() != n) {
        return Err(DcsError::input("DQ regressors must match the hit series length"));
    }
    let rows = n - lags;
    let k = 1 + lags + extra.len();
    let x = DMatrix::from_fn(rows, k, |r, c| {
        let t = r + lags;
        if c == 0 {
            1.0
        } else if c <= lags {
            hits[t - c]
        } else {
            extra[c - lags - 1][t]
        }
    });
    let y = DVector::from_iterator(rows, hits[lags..].iter().copied());
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let eig = nalgebra::SymmetricEigen::new(xtx.clone());
    let (lmin, lmax) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let ridged = !(lmin > 1e-10 * lmax);
    let system = if ridged {
        let jitter = 1e-8 * (xtx.trace() / k as f64).max(f64::MIN_POSITIVE);
        &xtx + DMatrix::<f64>::identity(k, k) * jitter
    } else {
        xtx.clone()
    };
    let chol = system
        .cholesky()
        .ok_or_else(|| DcsError::numeric("DQ normal equations are not positive definite"))?;
    let b = chol.solve(&xty);
    let stat = ((b.transpose() * &xtx * &b)[(0, 0)] / (alpha * (1.0 - alpha))).max(0.0);
    Ok(TestResult {
        statistic: stat,
        df: Some(k as f64),
        note: ridged.then(|| "collinear regressors, ridge fallback".to_string()),
        p_value: chi2_sf(stat, k as f64),
    })
}

/// Dynamic-quantile test with lagged hits and the contemporaneous VaR.
pub fn engle_dq(violations: &[bool], var: &[f64], alpha: f64, lags: usize) -> Result<TestResult> {
    if var.len() != violations.len() {
        return Err(DcsError::input("VaR series length does not match violations"));
    }
    let hits: Vec<f64> = violations.iter().map(|&v| f64::from(u8::from(v)) - alpha).collect();
    engle_dq_hits(&hits, &[var], alpha, lags)
}

/// Failure rate and the three coverage tests for one threshold series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub failure_rate: f64,
    pub uc: TestResult,
    pub cc: TestResult,
    pub dq: TestResult,
}

pub fn coverage_report(violations: &[bool], threshold: &[f64], alpha: f64, lags: usize) -> Result<CoverageReport> {
    Ok(CoverageReport {
        failure_rate: violations.iter().filter(|&&v| v).count() as f64 / violations.len().max(1) as f64,
        uc: kupiec_uc(violations, alpha)?,
        cc: christoffersen_cc(violations, alpha)?,
        dq: engle_dq(violations, threshold, alpha, lags)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_normal_var_es() {
        let (v, e) = var_es_normal(&[1.0, 0.0, 2.0], 0.05).unwrap();
        assert_abs_diff_eq!(v[0], 1.64485, epsilon = 1e-5);
        assert_abs_diff_eq!(e[0], 2.06271, epsilon = 1e-5);
        assert_eq!((v[1], e[1]), (0.0, 0.0));
        assert_abs_diff_eq!(v[2], 2.0 * v[0], epsilon = 1e-15);
        assert_abs_diff_eq!(e[2], 2.0 * e[0], epsilon = 1e-15);
        assert!(var_es_normal(&[1.0], 0.5).is_err());
        assert!(var_es_normal(&[1.0], 0.0).is_err());
    }

    fn hits(n: usize, x: usize) -> Vec<bool> {
        // spread x violations evenly
        (0..n).map(|i| (i * x) / n != ((i + 1) * x) / n).collect()
    }

    #[test]
    fn kupiec_values() {
        let v = hits(1000, 50);
        assert_eq!(v.iter().filter(|&&b| b).count(), 50);
        assert_abs_diff_eq!(kupiec_uc(&v, 0.05).unwrap().statistic, 0.0, epsilon = 1e-9);
        let v = hits(1000, 80);
        let expected = -2.0
            * (920.0 * 0.95f64.ln() + 80.0 * 0.05f64.ln() - 920.0 * 0.92f64.ln() - 80.0 * 0.08f64.ln());
        assert_abs_diff_eq!(kupiec_uc(&v, 0.05).unwrap().statistic, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(kupiec_uc(&v, 0.05).unwrap().statistic, 16.158, epsilon = 1e-3);
        let none = vec![false; 100];
        assert_abs_diff_eq!(kupiec_uc(&none, 0.05).unwrap().statistic, 10.259, epsilon = 1e-3);
        assert!(kupiec_uc(&none[..40], 0.05).is_err());
    }

    #[test]
    fn clustered_violations_fail_cc() {
        let mut v = vec![false; 1000];
        for b in v.iter_mut().skip(400).take(50) {
            *b = true;
        }
        let cc = christoffersen_cc(&v, 0.05).unwrap();
        let uc = kupiec_uc(&v, 0.05).unwrap();
        assert!(cc.p_value < 0.01);
        assert!(cc.statistic >= uc.statistic);
    }

    #[test]
    fn dq_zero_hits() {
        let hits = vec![0.0; 300];
        let var: Vec<f64> = (0..300).map(|i| 1.0 + (i as f64).sin()).collect();
        let r = engle_dq_hits(&hits, &[&var], 0.05, 4).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-12);
        assert_eq!(r.df, Some(6.0));
    }

    #[test]
    fn dq_constant_var_is_ridged() {
        let v = hits(500, 25);
        let var = vec![1.0; 500];
        let r = engle_dq(&v, &var, 0.05, 4).unwrap();
        assert!(r.note.is_some());
        assert!(r.statistic.is_finite());
    }
}
