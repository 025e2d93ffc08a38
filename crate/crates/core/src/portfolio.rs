//! Global-minimum-variance portfolios, sparse precision estimation with
//! stability selection, the rolling backtest and its performance metrics.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcs::{fit_estimator, Estimator};
use crate::error::{DcsError, Result};
use crate::ingest::ReturnPanel;
use crate::linalg;
use crate::ranks::{nearest_correlation, skeptic_matrix, CorrMatrix, CorrMethod};
use crate::rng::substream;

/// Trading days per year used for annualisation.
pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    /// Row index of the rebalance in the return panel.
    pub date: usize,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>, date: usize) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(DcsError::numeric("weights must be finite and non-empty"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(DcsError::numeric(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { weights, date })
    }

    pub fn equal(p: usize, date: usize) -> Self {
        Self {
            weights: vec![1.0 / p as f64; p],
            date,
        }
    }

    pub fn variance(&self, h: &DMatrix<f64>) -> f64 {
        let w = DVector::from_column_slice(&self.weights);
        (w.transpose() * h * &w)[(0, 0)]
    }
}

fn normalize_weights(x: &DVector<f64>, date: usize) -> Result<WeightVector> {
    let sum = x.sum();
    if !(sum.is_finite() && sum.abs() > f64::MIN_POSITIVE) {
        return Err(DcsError::numeric("GMV normalisation constant is zero or not finite"));
    }
    let mut w: Vec<f64> = x.iter().map(|v| v / sum).collect();
    // push the rounding residue into the largest weight
    let resid = 1.0 - w.iter().sum::<f64>();
    let k = (0..w.len()).max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs())).unwrap_or(0);
    w[k] += resid;
    WeightVector::new(w, date)
}

/// `w = H⁻¹ι / ι'H⁻¹ι`. A covariance without a Cholesky factor is repaired
/// by projecting its correlation part onto the nearest correlation matrix
/// and reloading the diagonal.
pub fn gmv_weights(h: &DMatrix<f64>) -> Result<WeightVector> {
    let p = h.nrows();
    if p == 0 || h.ncols() != p {
        return Err(DcsError::input("covariance must be square and non-empty"));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(DcsError::input("covariance contains non-finite values"));
    }
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    if !linalg::is_symmetric(h, 1e-10 * scale) {
        return Err(DcsError::input("covariance is not symmetric"));
    }
    let ones = DVector::from_element(p, 1.0);
    if let Some(chol) = linalg::symmetrize(h).cholesky() {
        return normalize_weights(&chol.solve(&ones), 0);
    }
    let d: Vec<f64> = h.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(DcsError::numeric("covariance has a non-positive variance"));
    }
    let corr = linalg::cov_to_corr(h)?;
    let repaired = nearest_correlation(&corr, CorrMethod::Pearson)?;
    let mut r = repaired.into_values();
    // a boundary projection can still be singular; lift it slightly
    for i in 0..p {
        for j in 0..p {
            if i != j {
                r[(i, j)] *= 1.0 - 1e-8;
            }
        }
    }
    let h2 = crate::dcs::scale_correlation(&r, &d);
    let chol = h2
        .cholesky()
        .ok_or_else(|| DcsError::numeric("covariance is singular after repair"))?;
    log::warn!("gmv: covariance repaired before inversion");
    normalize_weights(&chol.solve(&ones), 0)
}

/// Tolerance on the maximum change of the working covariance between sweeps.
const GLASSO_TOL: f64 = 1e-12;
const GLASSO_MAX_SWEEPS: usize = 2000;
const LASSO_MAX_SWEEPS: usize = 10_000;

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// ℓ₁-penalised Gaussian precision for a correlation matrix: minimises
/// `-log det Θ + tr(RΘ) + λ Σ_{i≠j} |Θ_ij|` by block coordinate descent
/// (graphical lasso). The diagonal is not penalised.
pub fn sparse_precision(r: &CorrMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DcsError::input(format!("penalty {lambda} must be finite and >= 0")));
    }
    if r.min_eigenvalue() < -1e-8 {
        return Err(DcsError::input("correlation matrix is not positive semidefinite"));
    }
    let s = r.values();
    let p = s.nrows();
    let mut w = s.clone();
    let mut betas = DMatrix::<f64>::zeros(p, p);
    let mut converged = false;
    for _ in 0..GLASSO_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let mut beta: Vec<f64> = others.iter().map(|&k| betas[(k, j)]).collect();
            for _ in 0..LASSO_MAX_SWEEPS {
                let mut delta: f64 = 0.0;
                for (a, &ka) in others.iter().enumerate() {
                    let mut partial = s[(ka, j)];
                    for (b, &kb) in others.iter().enumerate() {
                        if a != b {
                            partial -= w[(ka, kb)] * beta[b];
                        }
                    }
                    let new = soft_threshold(partial, lambda) / w[(ka, ka)];
                    delta = delta.max((new - beta[a]).abs());
                    beta[a] = new;
                }
                if delta < GLASSO_TOL {
                    break;
                }
            }
            for (a, &ka) in others.iter().enumerate() {
                let w12: f64 = others.iter().enumerate().map(|(b, &kb)| w[(ka, kb)] * beta[b]).sum();
                max_change = max_change.max((w12 - w[(ka, j)]).abs());
                w[(ka, j)] = w12;
                w[(j, ka)] = w12;
                betas[(ka, j)] = beta[a];
            }
        }
        if max_change < GLASSO_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DcsError::Convergence {
            message: format!("graphical lasso did not converge at lambda = {lambda}"),
            best: Vec::new(),
        });
    }
    let mut theta = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let cross: f64 = (0..p).filter(|&k| k != j).map(|k| w[(k, j)] * betas[(k, j)]).sum();
        let t22 = 1.0 / (w[(j, j)] - cross);
        if !(t22.is_finite() && t22 > 0.0) {
            return Err(DcsError::numeric(format!(
                "precision is not positive definite at lambda = {lambda}"
            )));
        }
        theta[(j, j)] = t22;
        for k in (0..p).filter(|&k| k != j) {
            theta[(k, j)] = -betas[(k, j)] * t22;
        }
    }
    Ok(linalg::symmetrize(&theta))
}

/// Largest componentwise violation of the optimality conditions of
/// [`sparse_precision`]: `Θ⁻¹ - R = λ sign(Θ)` off the diagonal where
/// `Θ_ij ≠ 0`, `|Θ⁻¹ - R| ≤ λ` where `Θ_ij = 0`, and `Θ⁻¹_ii = R_ii`.
pub fn kkt_residual(theta: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let w = linalg::spd_inverse(theta)?;
    let p = r.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..p {
        for j in 0..p {
            let g = w[(i, j)] - r[(i, j)];
            let v = if i == j {
                g.abs()
            } else if theta[(i, j)].abs() > 1e-12 {
                (g - lambda * theta[(i, j)].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

fn edge_set(theta: &DMatrix<f64>) -> Vec<bool> {
    let p = theta.nrows();
    let mut edges = Vec::with_capacity(p * (p - 1) / 2);
    for j in 1..p {
        for i in 0..j {
            edges.push(theta[(i, j)].abs() > 1e-10);
        }
    }
    edges
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StarsConfig {
    /// Penalty grid, sorted in descending order.
    pub lambdas: Vec<f64>,
    pub subsamples: usize,
    /// Rows per subsample; `⌊10√T⌋` (capped at `T`) when absent.
    pub subsample_size: Option<usize>,
    pub instability_cap: f64,
    pub method: CorrMethod,
    pub seed: u64,
}

impl StarsConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            lambdas: default_lambda_grid(),
            subsamples: 20,
            subsample_size: None,
            instability_cap: 0.05,
            method: CorrMethod::Tau,
            seed,
        }
    }
}

/// Twenty log-spaced penalties from 0.9 down to 0.01.
pub fn default_lambda_grid() -> Vec<f64> {
    let (hi, lo, n) = (0.9f64, 0.01f64, 20);
    (0..n)
        .map(|k| (hi.ln() + (lo.ln() - hi.ln()) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StarsResult {
    pub lambda: f64,
    /// Raw instability per grid point.
    pub instability: Vec<f64>,
    /// Running maximum of the instability from the top of the grid.
    pub monotone_instability: Vec<f64>,
    /// Set when even the largest penalty exceeds the cap.
    pub exceeded_cap: bool,
}

/// Stability selection of the penalty: the smallest λ on the descending
/// grid whose monotonised edge instability stays within the cap.
pub fn stars_select(panel: &DMatrix<f64>, cfg: &StarsConfig) -> Result<StarsResult> {
    let (t, _) = panel.shape();
    if cfg.lambdas.is_empty() {
        return Err(DcsError::input("empty penalty grid"));
    }
    if cfg.lambdas.windows(2).any(|w| w[0] < w[1]) {
        return Err(DcsError::input("penalty grid must be sorted in descending order"));
    }
    if cfg.subsamples < 10 {
        return Err(DcsError::input("StARS needs at least 10 subsamples"));
    }
    let b = cfg
        .subsample_size
        .unwrap_or_else(|| (10.0 * (t as f64).sqrt()).floor() as usize)
        .min(t);
    if b < 3 {
        return Err(DcsError::input("subsample size must be at least 3"));
    }
    let edges: Vec<Vec<Vec<bool>>> = (0..cfg.subsamples)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(cfg.seed, "stars", s as u64);
            let mut rows = index::sample(&mut rng, t, b).into_vec();
            rows.sort_unstable();
            let sub = panel.select_rows(rows.iter());
            let raw = skeptic_matrix(&sub, cfg.method)?;
            let r = nearest_correlation(raw.values(), cfg.method)?;
            cfg.lambdas
                .iter()
                .map(|&l| sparse_precision(&r, l).map(|th| edge_set(&th)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let n_edges = edges[0][0].len().max(1);
    let instability: Vec<f64> = (0..cfg.lambdas.len())
        .map(|k| {
            (0..n_edges.min(edges[0][k].len()))
                .map(|e| {
                    let xi = edges.iter().filter(|sub| sub[k][e]).count() as f64 / cfg.subsamples as f64;
                    2.0 * xi * (1.0 - xi)
                })
                .sum::<f64>()
                / n_edges as f64
        })
        .collect();
    let mut monotone = Vec::with_capacity(instability.len());
    let mut running: f64 = 0.0;
    for &d in &instability {
        running = running.max(d);
        monotone.push(running);
    }
    let feasible = monotone.iter().take_while(|&&d| d <= cfg.instability_cap).count();
    let (lambda, exceeded_cap) = if feasible == 0 {
        log::warn!("stars: every penalty exceeds the instability cap, using the largest");
        (cfg.lambdas[0], true)
    } else {
        (cfg.lambdas[feasible - 1], false)
    };
    Ok(StarsResult {
        lambda,
        instability,
        monotone_instability: monotone,
        exceeded_cap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PortfolioEstimator {
    EqualWeight,
    Model(Estimator),
}

impl PortfolioEstimator {
    pub fn label(self) -> &'static str {
        match self {
            PortfolioEstimator::EqualWeight => "EW",
            PortfolioEstimator::Model(e) => e.label(),
        }
    }
}

impl fmt::Display for PortfolioEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortfolioEstimator::EqualWeight => f.write_str("ew"),
            PortfolioEstimator::Model(e) => e.fmt(f),
        }
    }
}

impl FromStr for PortfolioEstimator {
    type Err = DcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ew" | "equal-weight" | "equal_weight" => Ok(PortfolioEstimator::EqualWeight),
            other => other.parse().map(PortfolioEstimator::Model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    None,
    Lambda(f64),
    Stars,
}

impl fmt::Display for Sparsity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sparsity::None => f.write_str("none"),
            Sparsity::Lambda(l) => write!(f, "lambda={l}"),
            Sparsity::Stars => f.write_str("stars"),
        }
    }
}

impl FromStr for Sparsity {
    type Err = DcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Sparsity::None),
            "stars" => Ok(Sparsity::Stars),
            other => {
                let v = other
                    .strip_prefix("lambda=")
                    .ok_or_else(|| DcsError::input(format!("unknown sparsity setting {other:?}")))?;
                let l: f64 = v
                    .parse()
                    .map_err(|_| DcsError::input(format!("invalid penalty {v:?}")))?;
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(DcsError::input(format!("penalty {l} must be finite and >= 0")));
                }
                Ok(Sparsity::Lambda(l))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnoverMode {
    /// Compare new weights with the previous weights after they drifted
    /// with realised returns over the holding period.
    Drifted,
    /// Compare consecutive target weight vectors.
    Raw,
}

impl FromStr for TurnoverMode {
    type Err = DcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drifted" => Ok(TurnoverMode::Drifted),
            "raw" => Ok(TurnoverMode::Raw),
            other => Err(DcsError::input(format!("unknown turnover mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub window: usize,
    pub holding: usize,
    pub estimator: PortfolioEstimator,
    pub sparsity: Sparsity,
    /// StARS settings used when `sparsity` is `Stars`.
    pub stars: Option<StarsConfig>,
    pub seed: u64,
}

impl BacktestConfig {
    pub fn new(window: usize, holding: usize, estimator: PortfolioEstimator) -> Self {
        Self {
            window,
            holding,
            estimator,
            sparsity: Sparsity::None,
            stars: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 200 {
            return Err(DcsError::input(format!("window {} is below 200", self.window)));
        }
        if self.holding < 1 {
            return Err(DcsError::input("holding period must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rebalance {
    /// Row of the first day held with these weights.
    pub index: usize,
    pub date: NaiveDate,
    pub weights: Vec<f64>,
    /// Previous weights after drifting through the holding period.
    pub drifted_before: Option<Vec<f64>>,
    /// Estimation error that forced a fallback to the previous weights.
    pub failure: Option<String>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub estimator: PortfolioEstimator,
    pub tickers: Vec<String>,
    pub rebalances: Vec<Rebalance>,
    pub dates: Vec<NaiveDate>,
    /// Realised daily portfolio log returns `w'r_t`.
    pub returns: Vec<f64>,
    /// Which rebalance was in force on each day.
    pub regime: Vec<usize>,
}

impl BacktestLedger {
    pub fn failures(&self) -> usize {
        self.rebalances.iter().filter(|r| r.failure.is_some()).count()
    }

    /// CSV with one row per out-of-sample day: date, the weights in force,
    /// and the realised return.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.tickers.iter().map(|t| format!("w_{t}")));
        header.push("return".to_string());
        w.write_record(&header)?;
        for (k, (&date, &ret)) in self.dates.iter().zip(&self.returns).enumerate() {
            let mut row = vec![date.to_string()];
            row.extend(self.rebalances[self.regime[k]].weights.iter().map(|x| format!("{x:.10}")));
            row.push(format!("{ret:.10}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn target_weights(window: &ReturnPanel, cfg: &BacktestConfig, rebalance: usize) -> Result<(Vec<f64>, Option<f64>)> {
    let estimator = match cfg.estimator {
        PortfolioEstimator::EqualWeight => return Ok((WeightVector::equal(window.dim(), 0).weights, None)),
        PortfolioEstimator::Model(e) => e,
    };
    let model = fit_estimator(window, estimator, false)?;
    let lambda = match cfg.sparsity {
        Sparsity::None => return Ok((gmv_weights(&model.forecast_covariance()?)?.weights, None)),
        Sparsity::Lambda(l) => l,
        Sparsity::Stars => {
            let mut stars = cfg.stars.clone().unwrap_or_else(|| StarsConfig::new(cfg.seed));
            stars.seed = crate::rng::child_seed(stars.seed, "stars-rebalance", rebalance as u64);
            stars.method = estimator.method();
            stars_select(&model.score_panel.scores, &stars)?.lambda
        }
    };
    let r = CorrMatrix::new(model.forecast_correlation()?, estimator.method())?;
    let theta = sparse_precision(&r, lambda)?;
    let sigma = model.forecast_sigma();
    let p = sigma.len();
    // precision of D R D is D⁻¹ Θ D⁻¹
    let x = DVector::from_fn(p, |i, _| (0..p).map(|j| theta[(i, j)] / (sigma[i] * sigma[j])).sum::<f64>());
    Ok((normalize_weights(&x, 0)?.weights, Some(lambda)))
}

fn drift(weights: &[f64], raw_log_returns: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut grown: Vec<f64> = weights
        .iter()
        .zip(raw_log_returns)
        .map(|(w, r)| w * r.exp())
        .collect();
    let total: f64 = grown.iter().sum();
    if total != 0.0 && total.is_finite() {
        grown.iter_mut().for_each(|g| *g /= total);
    }
    grown
}

/// Rebalance every `holding` days using the trailing `window` returns;
/// the final holding period may be shorter. Windows are estimated in
/// parallel and assembled in date order.
pub fn rolling_backtest(panel: &ReturnPanel, cfg: &BacktestConfig) -> Result<BacktestLedger> {
    cfg.validate()?;
    let (t, p) = panel.returns.shape();
    if t < cfg.window + cfg.holding {
        return Err(DcsError::input(format!(
            "panel has {t} rows, need at least window + holding = {}",
            cfg.window + cfg.holding
        )));
    }
    let starts: Vec<usize> = (cfg.window..t).step_by(cfg.holding).collect();
    let targets: Vec<Result<(Vec<f64>, Option<f64>)>> = starts
        .par_iter()
        .enumerate()
        .map(|(k, &h)| {
            let window = panel.window(h - cfg.window, h)?;
            target_weights(&window, cfg, k)
        })
        .collect();

    let mut rebalances: Vec<Rebalance> = Vec::with_capacity(starts.len());
    let mut returns = Vec::with_capacity(t - cfg.window);
    let mut dates = Vec::with_capacity(t - cfg.window);
    let mut regime = Vec::with_capacity(t - cfg.window);
    let mut drifted: Option<Vec<f64>> = None;
    for (k, (&h, target)) in starts.iter().zip(targets).enumerate() {
        let (weights, failure, lambda) = match target {
            Ok((w, l)) => (w, None, l),
            Err(e) => {
                log::warn!("rebalance {k} at row {h}: {e}; keeping previous weights");
                let prev = rebalances
                    .last()
                    .map_or_else(|| WeightVector::equal(p, h).weights, |r| r.weights.clone());
                (prev, Some(e.to_string()), None)
            }
        };
        let end = (h + cfg.holding).min(t);
        let mut current = weights.clone();
        for day in h..end {
            let ret: f64 = (0..p).map(|j| weights[j] * panel.raw_return(day, j)).sum();
            returns.push(ret);
            dates.push(panel.dates[day]);
            regime.push(k);
            current = drift(&current, (0..p).map(|j| panel.raw_return(day, j)));
        }
        rebalances.push(Rebalance {
            index: h,
            date: panel.dates[h],
            weights,
            drifted_before: drifted.take(),
            failure,
            lambda,
        });
        drifted = Some(current);
    }
    Ok(BacktestLedger {
        estimator: cfg.estimator,
        tickers: panel.tickers.clone(),
        rebalances,
        dates,
        returns,
        regime,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerfReport {
    pub estimator: String,
    /// Annualised mean return in percent.
    pub av: f64,
    /// Annualised standard deviation in percent.
    pub sd: f64,
    pub sr: f64,
    /// Average ℓ₁ weight change per rebalance.
    pub to: f64,
    pub turnover_mode: TurnoverMode,
    pub n_days: usize,
    pub n_rebalances: usize,
    pub failures: usize,
}

impl PerfReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn performance_metrics(ledger: &BacktestLedger, mode: TurnoverMode) -> Result<PerfReport> {
    let k = ledger.rebalances.len();
    if k < 2 {
        return Err(DcsError::input("performance metrics need at least two rebalances"));
    }
    let n = ledger.returns.len();
    let mean = ledger.returns.iter().sum::<f64>() / n as f64;
    let var = ledger.returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let av = TRADING_DAYS * mean * 100.0;
    let sd = (TRADING_DAYS * var).sqrt() * 100.0;
    if !(sd > 1e-12 * av.abs()) {
        return Err(DcsError::numeric("portfolio returns have zero variance; Sharpe ratio undefined"));
    }
    let to = ledger
        .rebalances
        .windows(2)
        .map(|w| match mode {
            TurnoverMode::Raw => l1(&w[1].weights, &w[0].weights),
            TurnoverMode::Drifted => l1(
                &w[1].weights,
                w[1].drifted_before.as_deref().unwrap_or(&w[0].weights),
            ),
        })
        .sum::<f64>()
        / (k - 1) as f64;
    Ok(PerfReport {
        estimator: ledger.estimator.label().to_string(),
        av,
        sd,
        sr: av / sd,
        to,
        turnover_mode: mode,
        n_days: n,
        n_rebalances: k,
        failures: ledger.failures(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gmv_closed_forms() {
        let w = gmv_weights(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        let w = gmv_weights(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        assert_abs_diff_eq!(w.weights[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(w.weights[1], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn gmv_repairs_indefinite_input() {
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let w = gmv_weights(&h).unwrap();
        assert_abs_diff_eq!(w.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert!(gmv_weights(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let r = CorrMatrix::identity(4, CorrMethod::Tau);
        for l in [0.0, 0.1, 10.0] {
            let th = sparse_precision(&r, l).unwrap();
            assert_abs_diff_eq!(linalg::max_abs_diff(&th, &DMatrix::identity(4, 4)), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_penalty_is_the_inverse() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.0]);
        let th = sparse_precision(&CorrMatrix::new(r.clone(), CorrMethod::Pearson).unwrap(), 0.0).unwrap();
        let inv = r.try_inverse().unwrap();
        assert!(linalg::max_abs_diff(&th, &inv) < 1e-8);
    }

    #[test]
    fn large_penalty_gives_independence() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.4, 0.6, 1.0, 0.5, 0.4, 0.5, 1.0]);
        let th = sparse_precision(&CorrMatrix::new(r, CorrMethod::Pearson).unwrap(), 10.0).unwrap();
        assert_abs_diff_eq!(linalg::max_abs_diff(&th, &DMatrix::identity(3, 3)), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sparsity_parsing() {
        assert_eq!("none".parse::<Sparsity>().unwrap(), Sparsity::None);
        assert_eq!("stars".parse::<Sparsity>().unwrap(), Sparsity::Stars);
        assert_eq!("lambda=0.5".parse::<Sparsity>().unwrap(), Sparsity::Lambda(0.5));
        assert!("lambda=-1".parse::<Sparsity>().is_err());
        assert!("dense".parse::<Sparsity>().is_err());
        assert_eq!("ew".parse::<PortfolioEstimator>().unwrap(), PortfolioEstimator::EqualWeight);
        assert_eq!(
            "dcs-rho".parse::<PortfolioEstimator>().unwrap(),
            PortfolioEstimator::Model(Estimator::DcsRho)
        );
    }

    fn hand_ledger(w: Vec<Vec<f64>>, returns: Vec<f64>) -> BacktestLedger {
        let dates = crate::ingest::business_days(returns.len());
        let rebalances = w
            .into_iter()
            .enumerate()
            .map(|(k, weights)| Rebalance {
                index: k,
                date: dates[k],
                drifted_before: None,
                weights,
                failure: None,
                lambda: None,
            })
            .collect();
        BacktestLedger {
            estimator: PortfolioEstimator::EqualWeight,
            tickers: vec!["A".into(), "B".into()],
            rebalances,
            regime: vec![0; returns.len()],
            dates,
            returns,
        }
    }

    #[test]
    fn turnover_of_a_full_switch() {
        let ledger = hand_ledger(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.01, -0.02, 0.005]);
        let perf = performance_metrics(&ledger, TurnoverMode::Raw).unwrap();
        assert_abs_diff_eq!(perf.to, 2.0, epsilon = 1e-15);
        let perf = performance_metrics(&ledger, TurnoverMode::Drifted).unwrap();
        assert_abs_diff_eq!(perf.to, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(perf.sr, perf.av / perf.sd, epsilon = 1e-15);
    }

    #[test]
    fn constant_returns_have_no_sharpe() {
        let ledger = hand_ledger(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.0004; 30]);
        assert!(matches!(
            performance_metrics(&ledger, TurnoverMode::Raw),
            Err(DcsError::Numeric(_))
        ));
    }

    #[test]
    fn backtest_config_validation() {
        assert!(BacktestConfig::new(199, 21, PortfolioEstimator::EqualWeight).validate().is_err());
        assert!(BacktestConfig::new(200, 0, PortfolioEstimator::EqualWeight).validate().is_err());
        assert!(BacktestConfig::new(200, 1, PortfolioEstimator::EqualWeight).validate().is_ok());
    }

    #[test]
    fn drift_renormalises() {
        let d = drift(&[0.5, 0.5], [0.0f64.ln_1p(), 1.0f64.ln_1p()].into_iter());
        assert_abs_diff_eq!(d[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 2.0 / 3.0, epsilon = 1e-15);
    }
}
