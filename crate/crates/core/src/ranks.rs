//! Rank statistics and the nonparanormal (Gaussian copula) machinery:
//! ECDF normal scores, Kendall's tau, Spearman's rho, the sine bridge from
//! rank correlation to latent Gaussian correlation, and the nearest
//! correlation matrix repair.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{DcsError, Result};
use crate::linalg;

/// Which dependence statistic produced a correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrMethod {
    /// Kendall's tau through `sin(πτ/2)`.
    Tau,
    /// Spearman's rho through `2 sin(πρ/6)`.
    Rho,
    /// Plain sample (Pearson) correlation.
    Pearson,
}

impl fmt::Display for CorrMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrMethod::Tau => "tau",
            CorrMethod::Rho => "rho",
            CorrMethod::Pearson => "pearson",
        })
    }
}

impl FromStr for CorrMethod {
    type Err = DcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tau" | "kendall" => Ok(CorrMethod::Tau),
            "rho" | "spearman" => Ok(CorrMethod::Rho),
            "pearson" => Ok(CorrMethod::Pearson),
            other => Err(DcsError::input(format!("unknown correlation method '{other}'"))),
        }
    }
}

/// A validated correlation matrix: symmetric, unit diagonal, entries in
/// `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    values: DMatrix<f64>,
    method: CorrMethod,
}

const CORR_TOL: f64 = 1e-12;

impl CorrMatrix {
    pub fn new(values: DMatrix<f64>, method: CorrMethod) -> Result<Self> {
        if !values.is_square() {
            return Err(DcsError::input("correlation matrix must be square"));
        }
        let n = values.nrows();
        for i in 0..n {
            if (values[(i, i)] - 1.0).abs() > CORR_TOL {
                return Err(DcsError::input(format!(
                    "diagonal entry {i} is {} (expected 1)",
                    values[(i, i)]
                )));
            }
        }
        if !linalg::is_symmetric(&values, CORR_TOL) {
            return Err(DcsError::input("correlation matrix is not symmetric"));
        }
        if values.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + CORR_TOL) {
            return Err(DcsError::input("correlation entries must lie in [-1, 1]"));
        }
        Ok(Self { values, method })
    }

    pub fn identity(p: usize, method: CorrMethod) -> Self {
        Self {
            values: DMatrix::identity(p, p),
            method,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn method(&self) -> CorrMethod {
        self.method
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.values)
    }

    /// The `(i, j)` 2×2 restriction, returned as its off-diagonal entry.
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

/// Normal scores ν = Φ⁻¹(F̂(ε)) for each column of a residual panel, with
/// the integer ranks that produced them.
#[derive(Debug, Clone)]
pub struct ScorePanel {
    /// T×p scores.
    pub scores: DMatrix<f64>,
    /// T×p ranks `#{s : ε_s ≤ ε_t}` per column.
    pub source_ranks: DMatrix<usize>,
}

impl ScorePanel {
    /// Nonparanormal scores from standardised residuals.
    pub fn from_residuals(residuals: &DMatrix<f64>) -> Result<Self> {
        let (t, p) = residuals.shape();
        let columns: Vec<Result<(Vec<f64>, Vec<usize>)>> = (0..p)
            .into_par_iter()
            .map(|j| {
                let col: Vec<f64> = residuals.column(j).iter().copied().collect();
                let ranks = max_ranks(&col)?;
                let u: Vec<f64> = ranks.iter().map(|&r| r as f64 / (t as f64 + 1.0)).collect();
                Ok((normal_scores(&u)?, ranks))
            })
            .collect();
        let mut scores = DMatrix::zeros(t, p);
        let mut source_ranks = DMatrix::from_element(t, p, 0usize);
        for (j, col) in columns.into_iter().enumerate() {
            let (s, r) = col?;
            for i in 0..t {
                scores[(i, j)] = s[i];
                source_ranks[(i, j)] = r[i];
            }
        }
        Ok(Self {
            scores,
            source_ranks,
        })
    }

    /// Use the residuals themselves as the driving series (the Gaussian DCC
    /// baseline). Ranks are still recorded.
    pub fn raw(residuals: &DMatrix<f64>) -> Result<Self> {
        let (t, p) = residuals.shape();
        let mut source_ranks = DMatrix::from_element(t, p, 0usize);
        for j in 0..p {
            let col: Vec<f64> = residuals.column(j).iter().copied().collect();
            for (i, r) in max_ranks(&col)?.into_iter().enumerate() {
                source_ranks[(i, j)] = r;
            }
        }
        Ok(Self {
            scores: residuals.clone(),
            source_ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.scores.ncols()
    }
}

/// `#{s : x_s ≤ x_t}` for every t (ties share the largest rank).
fn max_ranks(x: &[f64]) -> Result<Vec<usize>> {
    if x.is_empty() {
        return Err(DcsError::input("empty input"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DcsError::input("non-finite value in rank input"));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp_value(x[a], x[b]));
    let mut ranks = vec![0usize; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        for &k in &idx[start..end] {
            ranks[k] = end;
        }
        start = end;
    }
    Ok(ranks)
}

/// Average ranks (1-based), ties receive the mean of the positions they span.
pub fn average_ranks(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(DcsError::input("empty input"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DcsError::input("non-finite value in rank input"));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp_value(x[a], x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

/// Scaled empirical CDF `F̂(x_t) = #{s : x_s ≤ x_t} / (T + 1)`.
///
/// Values lie in `[1/(T+1), T/(T+1)]`, so the normal quantile is always
/// finite.
pub fn ecdf_transform(column: &[f64]) -> Result<Vec<f64>> {
    let denom = column.len() as f64 + 1.0;
    Ok(max_ranks(column)?.into_iter().map(|r| r as f64 / denom).collect())
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Standard normal quantile Φ⁻¹(u).
pub fn normal_quantile(u: f64) -> f64 {
    std_normal().inverse_cdf(u)
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Φ⁻¹ applied elementwise; every `u` must lie strictly inside (0, 1).
pub fn normal_scores(u: &[f64]) -> Result<Vec<f64>> {
    u.iter()
        .map(|&v| {
            if v > 0.0 && v < 1.0 {
                Ok(normal_quantile(v))
            } else {
                Err(DcsError::input(format!("uniform score {v} outside (0, 1)")))
            }
        })
        .collect()
}

/// Total order that treats `-0.0` and `0.0` as the same value.
fn cmp_value(a: f64, b: f64) -> std::cmp::Ordering {
    (a + 0.0).total_cmp(&(b + 0.0))
}

/// Kendall's tau with the raw sign-pair definition (tau-a):
/// `2/(T(T-1)) Σ_{s<s'} sign(x_s - x_s') sign(y_s - y_s')`.
///
/// Computed in O(T log T) by counting inversions with a merge sort
/// (Knight's algorithm); pairs tied in either coordinate contribute zero.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(DcsError::input(format!(
            "length mismatch: {} vs {}",
            n,
            y.len()
        )));
    }
    if n < 2 {
        return Err(DcsError::input("Kendall's tau needs at least two observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(DcsError::input("non-finite value in Kendall input"));
    }
    let s = kendall_sign_sum(x, y);
    Ok(2.0 * s as f64 / (n as f64 * (n as f64 - 1.0)))
}

/// Σ_{s<s'} sign(Δx)·sign(Δy) as an exact integer.
fn kendall_sign_sum(x: &[f64], y: &[f64]) -> i64 {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| cmp_value(x[a], x[b]).then(cmp_value(y[a], y[b])));

    // pairs tied in x, and tied in both
    let mut tied_x: i64 = 0;
    let mut tied_xy: i64 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let run = (j - i) as i64;
        tied_x += run * (run - 1) / 2;
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && y[idx[l]] == y[idx[k]] {
                l += 1;
            }
            let r = (l - k) as i64;
            tied_xy += r * (r - 1) / 2;
            k = l;
        }
        i = j;
    }

    // sorting the y sequence (in x order) counts discordant swaps
    let mut seq: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut seq, &mut buf);

    let mut tied_y: i64 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && seq[j] == seq[i] {
            j += 1;
        }
        let run = (j - i) as i64;
        tied_y += run * (run - 1) / 2;
        i = j;
    }

    let total = n as i64 * (n as i64 - 1) / 2;
    total - tied_x - tied_y + tied_xy - 2 * swaps
}

/// Stable merge sort of `v`, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(left, bl) + merge_count(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > 0.0 && sbb > 0.0 {
        Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(DcsError::input(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(DcsError::input("Spearman's rho needs at least three observations"));
    }
    let rx = average_ranks(x)?;
    let ry = average_ranks(y)?;
    pearson(&rx, &ry).ok_or_else(|| DcsError::input("constant column: rank correlation undefined"))
}

/// `sin(π τ / 2)`.
pub fn tau_to_corr(tau: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * tau).sin()
}

/// `2 sin(π ρ / 6)`.
pub fn rho_to_corr(rho: f64) -> f64 {
    2.0 * (std::f64::consts::PI * rho / 6.0).sin()
}

/// Rank-based correlation estimate of a T×p panel: the sine bridge applied
/// to every pairwise Kendall / Spearman statistic, unit diagonal.
///
/// `CorrMethod::Pearson` returns the ordinary sample correlation.
pub fn skeptic_matrix(panel: &DMatrix<f64>, method: CorrMethod) -> Result<CorrMatrix> {
    let (t, p) = panel.shape();
    if p < 2 {
        return Err(DcsError::input("need at least two columns"));
    }
    if t < 3 {
        return Err(DcsError::input("need at least three observations"));
    }
    if method == CorrMethod::Pearson {
        let c = linalg::sample_correlation(panel)?;
        return CorrMatrix::new(c, method);
    }

    let columns: Vec<Vec<f64>> = (0..p).map(|j| panel.column(j).iter().copied().collect()).collect();
    // Spearman is Pearson on ranks, so rank each column once.
    let ranked: Vec<Vec<f64>> = if method == CorrMethod::Rho {
        columns.iter().map(|c| average_ranks(c)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).collect();
    let entries: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| match method {
            CorrMethod::Tau => kendall_tau(&columns[i], &columns[j]).map(tau_to_corr),
            CorrMethod::Rho => pearson(&ranked[i], &ranked[j])
                .map(rho_to_corr)
                .ok_or_else(|| DcsError::input(format!("constant column among ({i}, {j})"))),
            CorrMethod::Pearson => unreachable!(),
        })
        .collect();

    let mut m = DMatrix::identity(p, p);
    for (&(i, j), v) in pairs.iter().zip(entries) {
        let v = v?.clamp(-1.0, 1.0);
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    CorrMatrix::new(m, method)
}

/// Max sweeps for [`nearest_correlation`].
pub const NEAREST_CORR_MAX_SWEEPS: usize = 1000;
const NEAREST_CORR_TOL: f64 = 1e-10;
const PSD_TOL: f64 = -1e-8;

/// Nearest correlation matrix in Frobenius norm (alternating projections
/// onto the PSD cone and the unit-diagonal subspace, with Dykstra's
/// correction on the PSD step).
///
/// Inputs that already have unit diagonal and minimum eigenvalue ≥ -1e-8
/// are returned unchanged.
pub fn nearest_correlation(m: &DMatrix<f64>, method: CorrMethod) -> Result<CorrMatrix> {
    if !m.is_square() {
        return Err(DcsError::input("matrix must be square"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DcsError::input("matrix has non-finite entries"));
    }
    let scale = m.abs().max().max(1.0);
    if !linalg::is_symmetric(m, 1e-10 * scale) {
        return Err(DcsError::input("matrix is not symmetric"));
    }
    let n = m.nrows();
    let unit_diag = (0..n).all(|i| (m[(i, i)] - 1.0).abs() <= CORR_TOL);
    let in_range = m.iter().all(|v| v.abs() <= 1.0 + CORR_TOL);
    if unit_diag && in_range && linalg::min_eigenvalue(m) >= PSD_TOL {
        return CorrMatrix::new(linalg::symmetrize(m), method);
    }

    let mut y = linalg::symmetrize(m);
    let mut correction = DMatrix::zeros(n, n);
    for _ in 0..NEAREST_CORR_MAX_SWEEPS {
        let r = &y - &correction;
        let x = psd_projection(&r);
        correction = &x - &r;
        let mut next = x;
        for i in 0..n {
            next[(i, i)] = 1.0;
        }
        let change = linalg::max_abs_diff(&next, &y);
        y = next;
        if change < NEAREST_CORR_TOL {
            for v in y.iter_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
            let y = linalg::symmetrize(&y);
            return CorrMatrix::new(y, method);
        }
    }
    Err(DcsError::Convergence {
        message: format!("nearest correlation did not converge in {NEAREST_CORR_MAX_SWEEPS} sweeps"),
        best: y.iter().copied().collect(),
    })
}

fn psd_projection(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let v = &eig.eigenvectors;
    let d = eig.eigenvalues.map(|l| l.max(0.0));
    linalg::symmetrize(&(v * DMatrix::from_diagonal(&d) * v.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecdf_examples() {
        assert_eq!(ecdf_transform(&[3.0, 1.0, 2.0]).unwrap(), vec![0.75, 0.25, 0.5]);
        assert_eq!(ecdf_transform(&[5.0, 5.0, 5.0]).unwrap(), vec![0.75; 3]);
        assert!(ecdf_transform(&[]).is_err());
        let u = ecdf_transform(&[0.3, 9.0, -1.0, 2.0]).unwrap();
        assert_eq!(u[1], 4.0 / 5.0);
        assert!(normal_scores(&u).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn normal_score_examples() {
        assert_eq!(normal_scores(&[0.5]).unwrap()[0], 0.0);
        // published z-table: z_{0.975} = 1.959964
        assert!((normal_scores(&[0.975]).unwrap()[0] - 1.959_963_985).abs() < 1e-8);
        let a = normal_scores(&[0.1, 0.9]).unwrap();
        assert!((a[0] + a[1]).abs() < 1e-12);
        assert!(normal_scores(&[0.0]).is_err());
        assert!(normal_scores(&[1.0]).is_err());
        assert!(normal_scores(&[-0.2]).is_err());
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn kendall_ties_contribute_zero() {
        // pairs: (0,1) tie in x, (0,2) +, (1,2) +  -> 2/3
        let t = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman_rho(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_rho(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman_rho(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman_rho(&x, &[1.0; 4]).is_err());
        assert!(spearman_rho(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]).unwrap(), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn sine_bridge_values() {
        assert_eq!(tau_to_corr(0.0), 0.0);
        assert!((tau_to_corr(1.0) - 1.0).abs() < 1e-15);
        assert!((rho_to_corr(1.0) - 1.0).abs() < 1e-15);
        // 2 sin(π/12) = (√6 - √2)/2
        let expected = (6f64.sqrt() - 2f64.sqrt()) / 2.0;
        assert!((rho_to_corr(0.5) - expected).abs() < 1e-15);
        assert!((rho_to_corr(0.5) - 0.517_638).abs() < 1e-6);
    }

    #[test]
    fn skeptic_matrix_structure() {
        let panel = DMatrix::from_row_slice(
            5,
            3,
            &[1.0, 2.0, 5.0, 2.0, 1.0, 4.0, 3.0, 4.0, 3.0, 4.0, 3.0, 2.0, 5.0, 5.0, 1.0],
        );
        for method in [CorrMethod::Tau, CorrMethod::Rho, CorrMethod::Pearson] {
            let c = skeptic_matrix(&panel, method).unwrap();
            assert_eq!(c.method(), method);
            for i in 0..3 {
                assert_eq!(c.values()[(i, i)], 1.0);
            }
        }
        let tau = skeptic_matrix(&panel, CorrMethod::Tau).unwrap();
        // column 2 is exactly reversed column 0
        assert!((tau.pair(0, 2) + 1.0).abs() < 1e-15);
        let t01 = kendall_tau(
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            &[2.0, 1.0, 4.0, 3.0, 5.0],
        )
        .unwrap();
        assert!((tau.pair(0, 1) - tau_to_corr(t01)).abs() < 1e-15);
        assert!(skeptic_matrix(&DMatrix::zeros(5, 1), CorrMethod::Tau).is_err());
    }

    #[test]
    fn nearest_correlation_fixed_points() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert_eq!(nearest_correlation(&id, CorrMethod::Tau).unwrap().values(), &id);
        let valid = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let out = nearest_correlation(&valid, CorrMethod::Rho).unwrap();
        assert!(linalg::max_abs_diff(out.values(), &valid) < 1e-12);
    }

    #[test]
    fn nearest_correlation_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        let out = nearest_correlation(&m, CorrMethod::Pearson).unwrap();
        assert!((out.pair(0, 1) - 1.0).abs() < 1e-8, "{}", out.pair(0, 1));
        assert!(out.min_eigenvalue() >= -1e-8);
    }

    #[test]
    fn nearest_correlation_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(matches!(nearest_correlation(&m, CorrMethod::Tau), Err(DcsError::Input(_))));
    }

    #[test]
    fn corr_matrix_validation() {
        assert!(CorrMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.9]), CorrMethod::Tau).is_err());
        assert!(CorrMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]), CorrMethod::Tau).is_err());
        assert!(CorrMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]), CorrMethod::Tau).is_err());
    }

    #[test]
    fn score_panel_ranks_and_scores_agree() {
        let res = DMatrix::from_row_slice(4, 2, &[0.5, -1.0, -0.2, 3.0, 2.0, 0.0, 0.1, 0.0]);
        let sp = ScorePanel::from_residuals(&res).unwrap();
        assert_eq!(sp.source_ranks.column(0).iter().copied().collect::<Vec<_>>(), vec![3, 1, 4, 2]);
        assert_eq!(sp.source_ranks.column(1).iter().copied().collect::<Vec<_>>(), vec![1, 4, 3, 3]);
        assert!((sp.scores[(2, 0)] - normal_quantile(0.8)).abs() < 1e-15);
        assert_eq!(sp.scores[(2, 1)], sp.scores[(3, 1)]);
    }
}
