//! The Dynamic Conditional SKEPTIC recursion and its two-step estimation.
//!
//! ```text
//! Q_t = (1 - α - β) Q̄ + α ν_{t-1} ν'_{t-1} + β Q_{t-1},    Q_1 = Q̄
//! R_t = diag(Q_t)^{-1/2} Q_t diag(Q_t)^{-1/2}
//! ```
//!
//! For the rank-based variants `ν_t` are nonparanormal normal scores of the
//! GARCH-standardised residuals and `Q̄` is the sine-bridged Kendall or
//! Spearman matrix. The Pearson variant is the classic DCC baseline: raw
//! residuals drive the recursion and `Q̄` is their sample correlation.
//!
//! `(α, β)` are estimated by minimising a composite likelihood built from the
//! contiguous pairs `(1,2), (2,3), …, (p-1,p)`, each pair running its own
//! 2×2 recursion. This never inverts a p×p matrix.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DcsError, Result};
use crate::garch::{fit_garch11, GarchFit};
use crate::ingest::ReturnPanel;
use crate::linalg;
use crate::optim::{logistic, logit, nelder_mead, NelderMeadConfig};
use crate::ranks::{nearest_correlation, skeptic_matrix, CorrMatrix, CorrMethod, ScorePanel};

/// Largest admissible `α + β` in estimation.
pub const MAX_PERSISTENCE: f64 = 1.0 - 1e-4;
/// Bound on |r| inside the bivariate likelihood terms.
pub const PAIR_CORR_CLIP: f64 = 1.0 - 1e-8;
/// Minimum sample length for estimating `(α, β)`.
pub const MIN_ESTIMATION_LEN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcsParams {
    pub alpha: f64,
    pub beta: f64,
}

impl DcsParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) || !(self.alpha + self.beta < 1.0) {
            return Err(DcsError::input(format!(
                "invalid correlation dynamics alpha={} beta={} (need alpha, beta >= 0, alpha + beta < 1)",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Which correlation model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    /// Gaussian DCC on raw residuals with sample-correlation target.
    Dcc,
    /// DCC with a Ledoit-Wolf linearly shrunk sample-correlation target.
    DccShrink,
    DcsTau,
    DcsRho,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Dcc, Estimator::DccShrink, Estimator::DcsRho, Estimator::DcsTau];

    pub fn method(self) -> CorrMethod {
        match self {
            Estimator::Dcc | Estimator::DccShrink => CorrMethod::Pearson,
            Estimator::DcsTau => CorrMethod::Tau,
            Estimator::DcsRho => CorrMethod::Rho,
        }
    }

    /// Column label used in study tables.
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Dcc => "DCC",
            Estimator::DccShrink => "DCC-LS",
            Estimator::DcsRho => "DCS Rho",
            Estimator::DcsTau => "DCS Tau",
        }
    }

    pub fn is_rank_based(self) -> bool {
        matches!(self, Estimator::DcsTau | Estimator::DcsRho)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Dcc => "dcc",
            Estimator::DccShrink => "dcc-ls",
            Estimator::DcsTau => "dcs-tau",
            Estimator::DcsRho => "dcs-rho",
        })
    }
}

impl FromStr for Estimator {
    type Err = DcsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dcc" | "pearson" => Ok(Estimator::Dcc),
            "dcc-ls" | "dcc-shrink" | "dcc_ls" => Ok(Estimator::DccShrink),
            "dcs-tau" | "dcs_tau" | "tau" => Ok(Estimator::DcsTau),
            "dcs-rho" | "dcs_rho" | "rho" => Ok(Estimator::DcsRho),
            other => Err(DcsError::input(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Per-period `Q_t` and `R_t`.
#[derive(Debug, Clone)]
pub struct CorrelationPath {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
}

fn normalize_q(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = q.nrows();
    let mut inv = Vec::with_capacity(p);
    for i in 0..p {
        let d = q[(i, i)];
        if !(d > 0.0) {
            return Err(DcsError::numeric(format!("q_ii = {d} is not positive")));
        }
        inv.push(1.0 / d.sqrt());
    }
    let mut r = DMatrix::from_fn(p, p, |i, j| (q[(i, j)] * (inv[i] * inv[j])).clamp(-1.0, 1.0));
    for i in 0..p {
        r[(i, i)] = 1.0;
    }
    Ok(r)
}

fn check_dims(qbar: &CorrMatrix, scores: &ScorePanel) -> Result<()> {
    if qbar.dim() != scores.dim() {
        return Err(DcsError::input(format!(
            "target is {}x{} but scores have {} columns",
            qbar.dim(),
            qbar.dim(),
            scores.dim()
        )));
    }
    Ok(())
}

/// Advance `q` in place: `q ← (1-α-β) Q̄ + α ν ν' + β q`.
fn step_q(q: &mut DMatrix<f64>, qbar: &DMatrix<f64>, params: &DcsParams, nu: &DVector<f64>) {
    let c = 1.0 - params.alpha - params.beta;
    let p = q.nrows();
    for j in 0..p {
        for i in j..p {
            let v = c * qbar[(i, j)] + params.alpha * (nu[i] * nu[j]) + params.beta * q[(i, j)];
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
}

/// Run the full p×p recursion over the sample.
pub fn dcs_recursion(qbar: &CorrMatrix, params: &DcsParams, scores: &ScorePanel) -> Result<CorrelationPath> {
    params.validate()?;
    check_dims(qbar, scores)?;
    let t_len = scores.len();
    let qb = qbar.values();
    let mut q = qb.clone();
    let mut qs = Vec::with_capacity(t_len);
    let mut rs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if t > 0 {
            let nu = scores.scores.row(t - 1).transpose();
            step_q(&mut q, qb, params, &nu);
        }
        rs.push(normalize_q(&q)?);
        qs.push(q.clone());
    }
    Ok(CorrelationPath { q: qs, r: rs })
}

/// `(Q_{T+1}, R_{T+1})`: the one-step-ahead correlation after the sample.
pub fn forecast_correlation(
    qbar: &CorrMatrix,
    params: &DcsParams,
    scores: &ScorePanel,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    params.validate()?;
    check_dims(qbar, scores)?;
    let qb = qbar.values();
    let mut q = qb.clone();
    for t in 0..scores.len() {
        let nu = scores.scores.row(t).transpose();
        step_q(&mut q, qb, params, &nu);
    }
    let r = normalize_q(&q)?;
    Ok((q, r))
}

/// Composite objective for one contiguous pair: Σ_t log|R_t| + ν'R_t⁻¹ν.
fn pair_objective(qbar12: f64, params: &DcsParams, x: &[f64], y: &[f64]) -> f64 {
    let c = 1.0 - params.alpha - params.beta;
    let (a, b) = (params.alpha, params.beta);
    let (mut q11, mut q22, mut q12) = (1.0, 1.0, qbar12);
    let mut total = 0.0;
    for t in 0..x.len() {
        if t > 0 {
            let (u, v) = (x[t - 1], y[t - 1]);
            q11 = c + a * u * u + b * q11;
            q22 = c + a * v * v + b * q22;
            q12 = c * qbar12 + a * u * v + b * q12;
        }
        let r = (q12 / (q11 * q22).sqrt()).clamp(-PAIR_CORR_CLIP, PAIR_CORR_CLIP);
        let det = 1.0 - r * r;
        let (u, v) = (x[t], y[t]);
        total += det.ln() + (u * u + v * v - 2.0 * r * u * v) / det;
    }
    total
}

struct PairData {
    columns: Vec<Vec<f64>>,
    qbar_off: Vec<f64>,
}

impl PairData {
    fn new(qbar: &CorrMatrix, scores: &ScorePanel) -> Self {
        let p = scores.dim();
        let columns = (0..p).map(|j| scores.scores.column(j).iter().copied().collect()).collect();
        let qbar_off = (0..p.saturating_sub(1)).map(|j| qbar.pair(j, j + 1)).collect();
        Self { columns, qbar_off }
    }

    fn objective(&self, params: &DcsParams) -> f64 {
        let terms: Vec<f64> = (0..self.qbar_off.len())
            .into_par_iter()
            .map(|k| pair_objective(self.qbar_off[k], params, &self.columns[k], &self.columns[k + 1]))
            .collect();
        // fixed summation order keeps results bit-reproducible
        terms.iter().sum()
    }
}

/// Contiguous-pair composite objective, to be minimised:
///
/// `Σ_t Σ_k [ log|R_t^(k)| + ν_t^(k)' (R_t^(k))⁻¹ ν_t^(k) ]`
///
/// where pair `k = (k, k+1)` runs a 2×2 recursion targeting the matching
/// 2×2 block of `Q̄`. The sum is not divided by T.
pub fn composite_loglik(params: &DcsParams, qbar: &CorrMatrix, scores: &ScorePanel) -> Result<f64> {
    params.validate()?;
    check_dims(qbar, scores)?;
    if scores.dim() < 2 {
        return Err(DcsError::input("composite likelihood needs at least two series"));
    }
    Ok(PairData::new(qbar, scores).objective(params))
}

fn decode_phi(theta: &[f64]) -> DcsParams {
    let s = MAX_PERSISTENCE * logistic(theta[0]);
    let alpha = s * logistic(theta[1]);
    DcsParams { alpha, beta: s - alpha }
}

fn encode_phi(p: &DcsParams) -> Vec<f64> {
    let s = p.alpha + p.beta;
    vec![logit(s / MAX_PERSISTENCE), logit(p.alpha / s)]
}

/// Minimise [`composite_loglik`] over `{α ≥ 0, β ≥ 0, α + β ≤ 1 - 1e-4}`.
pub fn estimate_phi(qbar: &CorrMatrix, scores: &ScorePanel) -> Result<DcsParams> {
    check_dims(qbar, scores)?;
    if scores.len() < MIN_ESTIMATION_LEN {
        return Err(DcsError::input(format!(
            "need at least {MIN_ESTIMATION_LEN} observations, got {}",
            scores.len()
        )));
    }
    if scores.dim() < 2 {
        return Err(DcsError::input("need at least two series"));
    }
    let data = PairData::new(qbar, scores);
    let objective = |theta: &[f64]| data.objective(&decode_phi(theta));

    let starts = [
        (0.02, 0.97),
        (0.05, 0.90),
        (0.01, 0.98),
        (0.03, 0.94),
        (0.10, 0.80),
        (0.005, 0.90),
    ];
    let start = starts
        .iter()
        .map(|&(a, b)| encode_phi(&DcsParams { alpha: a, beta: b }))
        .min_by(|x, y| objective(x).total_cmp(&objective(y)))
        .expect("non-empty start set");

    let cfg = NelderMeadConfig {
        max_iter: 2000,
        ftol: 1e-11,
        xtol: 1e-7,
        step: 0.5,
        restarts: 2,
    };
    let res = nelder_mead(objective, &start, &cfg);
    let params = decode_phi(&res.x);
    if !res.converged || !res.fx.is_finite() {
        return Err(DcsError::Convergence {
            message: format!(
                "correlation dynamics did not converge after {} iterations",
                res.iterations
            ),
            best: vec![params.alpha, params.beta],
        });
    }
    params.validate()?;
    Ok(params)
}

/// Ledoit-Wolf linear shrinkage of the sample correlation of `residuals`
/// toward the identity. Returns the shrunk matrix and the intensity.
pub fn shrunk_correlation(residuals: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (t, p) = residuals.shape();
    let means: Vec<f64> = (0..p).map(|j| residuals.column(j).mean()).collect();
    let sds: Vec<f64> = (0..p)
        .map(|j| {
            let m = means[j];
            (residuals.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64).sqrt()
        })
        .collect();
    if sds.iter().any(|&s| !(s > 0.0)) {
        return Err(DcsError::input("constant column: correlation undefined"));
    }
    let x = DMatrix::from_fn(t, p, |i, j| (residuals[(i, j)] - means[j]) / sds[j]);
    let s = x.transpose() * &x / t as f64;
    let mut pi_hat = 0.0;
    for r in 0..t {
        let row = x.row(r);
        for i in 0..p {
            for j in 0..p {
                let d = row[i] * row[j] - s[(i, j)];
                pi_hat += d * d;
            }
        }
    }
    pi_hat /= t as f64;
    let gamma_hat = (&s - DMatrix::<f64>::identity(p, p)).norm_squared();
    let intensity = if gamma_hat > 0.0 {
        (pi_hat / (t as f64 * gamma_hat)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let mut shrunk = &s * (1.0 - intensity) + DMatrix::<f64>::identity(p, p) * intensity;
    for i in 0..p {
        shrunk[(i, i)] = 1.0;
    }
    Ok((linalg::symmetrize(&shrunk), intensity))
}

/// A fitted two-step model.
#[derive(Debug, Clone)]
pub struct DcsModel {
    pub params: DcsParams,
    pub qbar: CorrMatrix,
    pub method: CorrMethod,
    pub estimator: Estimator,
    pub garch_fits: Vec<GarchFit>,
    pub score_panel: ScorePanel,
    pub leverage: bool,
    /// Whether `Q̄` had to be projected onto the correlation set.
    pub qbar_repaired: bool,
}

impl DcsModel {
    pub fn dim(&self) -> usize {
        self.garch_fits.len()
    }

    pub fn len(&self) -> usize {
        self.score_panel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score_panel.is_empty()
    }

    pub fn correlation_path(&self) -> Result<CorrelationPath> {
        dcs_recursion(&self.qbar, &self.params, &self.score_panel)
    }

    /// `R_t` for a single 0-based period (runs the recursion up to `t`).
    pub fn correlation_at(&self, t: usize) -> Result<DMatrix<f64>> {
        if t >= self.len() {
            return Err(DcsError::input(format!("period {t} outside sample of {}", self.len())));
        }
        let qb = self.qbar.values();
        let mut q = qb.clone();
        for s in 0..t {
            let nu = self.score_panel.scores.row(s).transpose();
            step_q(&mut q, qb, &self.params, &nu);
        }
        normalize_q(&q)
    }

    /// One-step-ahead correlation `R_{T+1}`.
    pub fn forecast_correlation(&self) -> Result<DMatrix<f64>> {
        forecast_correlation(&self.qbar, &self.params, &self.score_panel).map(|(_, r)| r)
    }

    /// One-step-ahead conditional standard deviations.
    pub fn forecast_sigma(&self) -> Vec<f64> {
        self.garch_fits.iter().map(|g| g.next_variance().sqrt()).collect()
    }

    /// One-step-ahead covariance `H_{T+1} = D_{T+1} R_{T+1} D_{T+1}`.
    pub fn forecast_covariance(&self) -> Result<DMatrix<f64>> {
        let r = self.forecast_correlation()?;
        Ok(scale_correlation(&r, &self.forecast_sigma()))
    }

    /// Number of free parameters: GARCH per asset plus `(α, β)`.
    pub fn n_params(&self) -> usize {
        let per_asset = if self.leverage { 4 } else { 3 };
        per_asset * self.dim() + 2
    }
}

/// `D R D` with `D = diag(sigma)`.
pub fn scale_correlation(r: &DMatrix<f64>, sigma: &[f64]) -> DMatrix<f64> {
    let p = r.nrows();
    DMatrix::from_fn(p, p, |i, j| r[(i, j)] * (sigma[i] * sigma[j]))
}

/// Fit the two-step model for a rank-based (`Tau`, `Rho`) or Gaussian
/// (`Pearson`) correlation target.
pub fn fit_dcs(panel: &ReturnPanel, method: CorrMethod, leverage: bool) -> Result<DcsModel> {
    let estimator = match method {
        CorrMethod::Tau => Estimator::DcsTau,
        CorrMethod::Rho => Estimator::DcsRho,
        CorrMethod::Pearson => Estimator::Dcc,
    };
    fit_estimator(panel, estimator, leverage)
}

/// Fit any of the supported [`Estimator`]s.
pub fn fit_estimator(panel: &ReturnPanel, estimator: Estimator, leverage: bool) -> Result<DcsModel> {
    let (t, p) = panel.returns.shape();
    if p < 2 {
        return Err(DcsError::input("correlation model needs at least two assets"));
    }
    if t < MIN_ESTIMATION_LEN {
        return Err(DcsError::input(format!(
            "need at least {MIN_ESTIMATION_LEN} observations, got {t}"
        )));
    }
    if panel.returns.iter().any(|v| !v.is_finite()) {
        return Err(DcsError::input("panel has non-finite returns"));
    }

    let fits: Vec<Result<GarchFit>> = (0..p)
        .into_par_iter()
        .map(|j| {
            fit_garch11(&panel.column(j), leverage).map_err(|e| match e {
                DcsError::Input(m) => DcsError::Input(format!("{}: {m}", panel.tickers[j])),
                other => other,
            })
        })
        .collect();
    let garch_fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let residuals = DMatrix::from_fn(t, p, |i, j| garch_fits[j].residuals[i]);

    let method = estimator.method();
    let (score_panel, raw_target) = match estimator {
        Estimator::Dcc => (
            ScorePanel::raw(&residuals)?,
            linalg::sample_correlation(&residuals)?,
        ),
        Estimator::DccShrink => (ScorePanel::raw(&residuals)?, shrunk_correlation(&residuals)?.0),
        Estimator::DcsTau | Estimator::DcsRho => (
            ScorePanel::from_residuals(&residuals)?,
            skeptic_matrix(&residuals, method)?.into_values(),
        ),
    };
    let qbar = nearest_correlation(&raw_target, method)?;
    let qbar_repaired = linalg::max_abs_diff(qbar.values(), &raw_target) > 0.0;
    if qbar_repaired {
        log::debug!("{estimator}: target projected onto the nearest correlation matrix");
    }
    let params = estimate_phi(&qbar, &score_panel)?;
    Ok(DcsModel {
        params,
        qbar,
        method,
        estimator,
        garch_fits,
        score_panel,
        leverage,
        qbar_repaired,
    })
}

/// `H_t = D_t R_t D_t` for every period of the sample.
#[derive(Debug, Clone)]
pub struct CovarianceSeries {
    pub h: Vec<DMatrix<f64>>,
}

pub fn covariance_series(model: &DcsModel) -> Result<CovarianceSeries> {
    let path = model.correlation_path()?;
    let h = path
        .r
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let sigma: Vec<f64> = model.garch_fits.iter().map(|g| g.sigma[t]).collect();
            scale_correlation(r, &sigma)
        })
        .collect();
    Ok(CovarianceSeries { h })
}

/// Log-likelihood and information criteria of a fitted model.
///
/// `loglik = Σ_i ℓ_GARCH,i − ½ Σ_t (log|R_t| + s_t' R_t⁻¹ s_t − s_t' s_t)`
/// where `s_t` are the series driving the recursion (normal scores or raw
/// residuals). The second term is the Gaussian copula density relative to
/// independence, so models fitted to the same returns are comparable.
/// Criteria are per observation: `AIC = (−2ℓ + 2k)/T`,
/// `BIC = (−2ℓ + k ln T)/T`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelCriteria {
    pub loglik: f64,
    pub volatility_loglik: f64,
    pub correlation_loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_obs: usize,
}

pub fn model_loglik_aic_bic(model: &DcsModel) -> Result<ModelCriteria> {
    let qb = model.qbar.values();
    let p = model.dim();
    let t_len = model.len();
    let mut q = qb.clone();
    let mut corr_ll = 0.0;
    for t in 0..t_len {
        if t > 0 {
            let nu = model.score_panel.scores.row(t - 1).transpose();
            step_q(&mut q, qb, &model.params, &nu);
        }
        let r = normalize_q(&q)?;
        let chol = match r.clone().cholesky() {
            Some(c) => c,
            None => (r + DMatrix::<f64>::identity(p, p) * 1e-8)
                .cholesky()
                .ok_or_else(|| DcsError::numeric(format!("R_{t} is not positive definite")))?,
        };
        let s = model.score_panel.scores.row(t).transpose();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let z = chol.l().solve_lower_triangular(&s).expect("triangular solve with positive diagonal");
        corr_ll -= 0.5 * (logdet + z.norm_squared() - s.norm_squared());
    }
    let vol_ll: f64 = model.garch_fits.iter().map(|g| g.loglik).sum();
    let loglik = vol_ll + corr_ll;
    let k = model.n_params();
    let n = t_len as f64;
    Ok(ModelCriteria {
        loglik,
        volatility_loglik: vol_ll,
        correlation_loglik: corr_ll,
        aic: (-2.0 * loglik + 2.0 * k as f64) / n,
        bic: (-2.0 * loglik + k as f64 * n.ln()) / n,
        n_params: k,
        n_obs: t_len,
    })
}
