//! Residual and distributional diagnostics, and the pairwise portfolio
//! comparison tests.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{DcsError, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Degrees of freedom of the reference distribution, when there is one.
    pub df: Option<f64>,
    pub note: Option<String>,
    pub p_value: f64,
}

impl TestResult {
    fn new(statistic: f64, df: Option<f64>, p_value: f64) -> Self {
        Self {
            statistic,
            df,
            note: None,
            p_value: p_value.clamp(0.0, 1.0),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

fn chi2_sf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df).map_or(f64::NAN, |d| d.sf(x))
}

fn normal_two_sided(z: f64) -> f64 {
    2.0 * Normal::standard().sf(z.abs())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Multivariate portmanteau statistic
/// `Q_h = T² Σ_{i=1}^h (T-i)^{-1} tr(C_i' C_0^{-1} C_i C_0^{-1})`
/// with `C_i = T^{-1} Σ_t e_t e_{t-i}'`, compared with χ² on `p²(h-k)`
/// degrees of freedom (floored at 1).
pub fn portmanteau(residuals: &DMatrix<f64>, h: usize, k: usize) -> Result<TestResult> {
    let (t, p) = residuals.shape();
    if h == 0 {
        return Err(DcsError::input("portmanteau needs h >= 1"));
    }
    if t <= h + 1 {
        return Err(DcsError::input(format!("portmanteau needs T > h + 1 (T = {t}, h = {h})")));
    }
    let tf = t as f64;
    let lagged = |i: usize| {
        let a = residuals.rows(i, t - i);
        let b = residuals.rows(0, t - i);
        (a.transpose() * b) / tf
    };
    let c0 = lagged(0);
    let c0_inv = c0
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| DcsError::numeric("lag-0 autocovariance is singular"))?;
    let mut q = 0.0;
    for i in 1..=h {
        let ci = lagged(i);
        let term = (ci.transpose() * &c0_inv * &ci * &c0_inv).trace();
        q += term / (tf - i as f64);
    }
    q *= tf * tf;
    let mut result = if k >= h {
        log::warn!("portmanteau: k = {k} >= h = {h}, degrees of freedom floored at 1");
        TestResult::new(q, Some(1.0), chi2_sf(q, 1.0)).with_note("degrees of freedom floored at 1")
    } else {
        let df = (p * p * (h - k)) as f64;
        TestResult::new(q, Some(df), chi2_sf(q, df))
    };
    if !result.statistic.is_finite() {
        return Err(DcsError::numeric("portmanteau statistic is not finite"));
    }
    result.statistic = result.statistic.max(0.0);
    Ok(result)
}

/// Population skewness and kurtosis.
pub fn moments(series: &[f64]) -> Result<(f64, f64)> {
    if series.is_empty() {
        return Err(DcsError::input("empty series"));
    }
    let n = series.len() as f64;
    let m = mean(series);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in series {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if !(m2 > 0.0) {
        return Err(DcsError::input("series has zero variance"));
    }
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2)))
}

pub fn jarque_bera(series: &[f64]) -> Result<TestResult> {
    if series.len() < 20 {
        return Err(DcsError::input("Jarque-Bera needs at least 20 observations"));
    }
    let (s, k) = moments(series)?;
    let jb = series.len() as f64 / 6.0 * (s * s + (k - 3.0).powi(2) / 4.0);
    Ok(TestResult::new(jb, Some(2.0), (-jb / 2.0).exp()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelJarqueBera {
    pub per_series: Vec<TestResult>,
    pub sum: f64,
}

/// Jarque-Bera on every column plus the summed statistic.
pub fn jarque_bera_panel(panel: &DMatrix<f64>) -> Result<PanelJarqueBera> {
    let per_series = panel
        .column_iter()
        .map(|c| jarque_bera(c.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let sum = per_series.iter().map(|r| r.statistic).sum();
    Ok(PanelJarqueBera { per_series, sum })
}

/// Degrees of freedom of a Student-t matching the sample excess kurtosis,
/// `ν = 4 + 6/κ`. Returns `None` when the sample is not leptokurtic.
pub fn moment_matched_nu(series: &[f64]) -> Result<Option<f64>> {
    let (_, k) = moments(series)?;
    let excess = k - 3.0;
    Ok((excess > 0.0).then(|| 4.0 + 6.0 / excess))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KsReference {
    Normal { mean: f64, sd: f64 },
    /// Student-t with `nu` degrees of freedom, rescaled to unit variance.
    StudentT { nu: f64 },
}

impl KsReference {
    fn cdf_fn(&self) -> Result<Box<dyn Fn(f64) -> f64>> {
        match *self {
            KsReference::Normal { mean, sd } => {
                let d = Normal::new(mean, sd).map_err(|e| DcsError::input(format!("normal reference: {e}")))?;
                Ok(Box::new(move |x| d.cdf(x)))
            }
            KsReference::StudentT { nu } => {
                if !(nu > 2.0) {
                    return Err(DcsError::input("unit-variance t reference needs nu > 2"));
                }
                let scale = ((nu - 2.0) / nu).sqrt();
                let d = StudentsT::new(0.0, scale, nu).map_err(|e| DcsError::input(format!("t reference: {e}")))?;
                Ok(Box::new(move |x| d.cdf(x)))
            }
        }
    }
}

/// Kolmogorov limiting survival function `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against a fully specified reference.
pub fn ks_test(series: &[f64], reference: KsReference) -> Result<TestResult> {
    if series.len() < 50 {
        return Err(DcsError::input("KS test needs at least 50 observations"));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(DcsError::input("KS test input contains non-finite values"));
    }
    let cdf = reference.cdf_fn()?;
    let mut xs = series.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    let p = kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
    Ok(TestResult::new(d.clamp(0.0, 1.0), None, p))
}

/// Two-sample t statistic `(m1 - m2) / sqrt((s1² + s2²)/n)` with a
/// two-sided normal p-value.
pub fn two_sample_t(r1: &[f64], r2: &[f64]) -> Result<TestResult> {
    if r1.len() != r2.len() {
        return Err(DcsError::input(format!("length mismatch: {} vs {}", r1.len(), r2.len())));
    }
    if r1.len() < 30 {
        return Err(DcsError::input("t test needs at least 30 observations"));
    }
    let n = r1.len() as f64;
    let se = ((sample_var(r1) + sample_var(r2)) / n).sqrt();
    let diff = mean(r1) - mean(r2);
    if se == 0.0 {
        if diff == 0.0 {
            return Ok(TestResult::new(0.0, None, 1.0));
        }
        return Err(DcsError::numeric("t statistic undefined: both series are constant"));
    }
    let t = diff / se;
    Ok(TestResult::new(t, None, normal_two_sided(t)))
}

/// Variance-ratio F test, two-sided against F(n1-1, n2-1).
pub fn variance_f(r1: &[f64], r2: &[f64]) -> Result<TestResult> {
    if r1.len() < 30 || r2.len() < 30 {
        return Err(DcsError::input("F test needs at least 30 observations per series"));
    }
    let v2 = sample_var(r2);
    if !(v2 > 0.0) {
        return Err(DcsError::numeric("second series has zero variance"));
    }
    let f = sample_var(r1) / v2;
    let (d1, d2) = ((r1.len() - 1) as f64, (r2.len() - 1) as f64);
    let dist = FisherSnedecor::new(d1, d2).map_err(|e| DcsError::numeric(format!("F distribution: {e}")))?;
    let c = dist.cdf(f);
    let mut res = TestResult::new(f, Some(d1), 2.0 * c.min(1.0 - c));
    res.note = Some(format!("F({d1}, {d2})"));
    Ok(res)
}

fn sharpe(x: &[f64]) -> f64 {
    let sd = sample_var(x).sqrt();
    if sd > 0.0 {
        mean(x) / sd
    } else {
        0.0
    }
}

/// Default block length for the circular block bootstrap, `⌊n^{1/3}⌋`.
pub fn default_block_len(n: usize) -> usize {
    ((n as f64).cbrt().floor() as usize).max(1)
}

/// Test of equal Sharpe ratios by circular block bootstrap of the paired
/// series. The statistic is the per-period Sharpe difference; the p-value
/// compares `|Δ* - Δ|` with `|Δ|`.
pub fn sharpe_diff_bootstrap(r1: &[f64], r2: &[f64], block_len: usize, boots: usize, seed: u64) -> Result<TestResult> {
    if r1.len() != r2.len() {
        return Err(DcsError::input(format!("length mismatch: {} vs {}", r1.len(), r2.len())));
    }
    let n = r1.len();
    if n < 200 {
        return Err(DcsError::input("Sharpe bootstrap needs at least 200 observations"));
    }
    if block_len == 0 || block_len > n {
        return Err(DcsError::input(format!("block length {block_len} outside [1, {n}]")));
    }
    if boots == 0 {
        return Err(DcsError::input("need at least one bootstrap replicate"));
    }
    let delta = sharpe(r1) - sharpe(r2);
    let exceed: Vec<bool> = (0..boots)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, "sharpe-bootstrap", b as u64);
            let mut x1 = Vec::with_capacity(n);
            let mut x2 = Vec::with_capacity(n);
            while x1.len() < n {
                let start = rng.random_range(0..n);
                for k in 0..block_len.min(n - x1.len()) {
                    let idx = (start + k) % n;
                    x1.push(r1[idx]);
                    x2.push(r2[idx]);
                }
            }
            let d = sharpe(&x1) - sharpe(&x2);
            (d - delta).abs() >= delta.abs()
        })
        .collect();
    let count = exceed.iter().filter(|&&e| e).count();
    let p = (count as f64 + 1.0) / (boots as f64 + 1.0);
    Ok(TestResult::new(delta, None, p).with_note(format!(
        "circular block bootstrap, block length {block_len}, {boots} replicates"
    )))
}

/// Named test results, serialised as a JSON object keyed by test name.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub tests: BTreeMap<String, TestResult>,
}

impl DiagnosticsReport {
    pub fn insert(&mut self, name: impl Into<String>, result: TestResult) {
        self.tests.insert(name.into(), result);
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jb_alternating_series() {
        let x: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = jarque_bera(&x).unwrap();
        assert_abs_diff_eq!(r.statistic, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn jb_rejects_zero_variance() {
        assert!(matches!(jarque_bera(&[2.0; 30]), Err(DcsError::Input(_))));
    }

    #[test]
    fn t_test_arithmetic() {
        // means differ by 0.001, both sample variances 1e-4, n = 100
        let base: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let scale = (1e-4 / sample_var(&base)).sqrt();
        let r2: Vec<f64> = base.iter().map(|x| x * scale).collect();
        let r1: Vec<f64> = r2.iter().map(|x| x + 0.001).collect();
        let t = two_sample_t(&r1, &r2).unwrap();
        assert_abs_diff_eq!(t.statistic, 0.001 / (0.0002f64 / 100.0).sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(t.statistic, 0.5f64.sqrt(), epsilon = 1e-4);
        let swapped = two_sample_t(&r2, &r1).unwrap();
        assert_abs_diff_eq!(swapped.statistic, -t.statistic, epsilon = 1e-12);
        assert_eq!(two_sample_t(&r1, &r1).unwrap().statistic, 0.0);
        assert!(two_sample_t(&r1, &r1[1..]).is_err());
    }

    #[test]
    fn f_test_identities() {
        let a: Vec<f64> = (0..50).map(|i| ((i * 7919) % 101) as f64).collect();
        let f = variance_f(&a, &a).unwrap();
        assert_abs_diff_eq!(f.statistic, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.p_value, 1.0, epsilon = 1e-9);
        let b: Vec<f64> = a.iter().map(|x| x * 2f64.sqrt()).collect();
        let g = variance_f(&b, &a).unwrap();
        assert_abs_diff_eq!(g.statistic, 2.0, epsilon = 1e-12);
        let h = variance_f(&a, &b).unwrap();
        assert_abs_diff_eq!(h.statistic, 0.5, epsilon = 1e-12);
        assert!(matches!(variance_f(&a, &[1.0; 40]), Err(DcsError::Numeric(_))));
    }

    #[test]
    fn kolmogorov_tail() {
        assert_abs_diff_eq!(kolmogorov_sf(1.36), 0.0494, epsilon = 5e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn portmanteau_rejects_short_panel() {
        let m = DMatrix::from_element(5, 2, 1.0);
        assert!(portmanteau(&m, 10, 0).is_err());
    }

    #[test]
    fn sharpe_identical_series() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let r = sharpe_diff_bootstrap(&x, &x, 6, 99, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn moment_matched_nu_from_kurtosis() {
        assert_eq!(moment_matched_nu(&[1.0, -1.0, 1.0, -1.0]).unwrap(), None);
    }
}
