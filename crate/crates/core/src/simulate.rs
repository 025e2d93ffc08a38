//! Synthetic markets with DCC correlation dynamics, Student-t innovations
//! and outlier contamination, plus the Monte Carlo parameter-recovery study.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcs::{fit_estimator, Estimator};
use crate::error::{DcsError, Result};
use crate::ingest::ReturnPanel;
use crate::linalg;
use crate::ranks::{CorrMatrix, CorrMethod};
use crate::rng::{child_seed, substream, Rng};

/// Largest condition number allowed for a generated target correlation.
pub const MAX_TARGET_CONDITION: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub p: usize,
    pub t_len: usize,
    pub alpha_true: f64,
    pub beta_true: f64,
    /// Inclusive integer range for the per-asset Student-t degrees of freedom.
    pub nu_range: (u32, u32),
    /// Fraction of entries replaced by contaminating draws.
    pub delta: f64,
    pub contaminant_nu: f64,
    /// Target correlation; a random one is generated when absent.
    pub qbar: Option<CorrMatrix>,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(p: usize, t_len: usize, seed: u64) -> Self {
        Self {
            p,
            t_len,
            alpha_true: 0.02,
            beta_true: 0.97,
            nu_range: (4, 8),
            delta: 0.0,
            contaminant_nu: 3.0,
            qbar: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(DcsError::input("simulation needs p >= 2"));
        }
        if self.t_len < 2 {
            return Err(DcsError::input("simulation needs at least two periods"));
        }
        if !(self.alpha_true >= 0.0 && self.beta_true >= 0.0 && self.alpha_true + self.beta_true < 1.0) {
            return Err(DcsError::input("need alpha_true, beta_true >= 0 and alpha_true + beta_true < 1"));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(DcsError::input(format!("delta {} outside [0, 1)", self.delta)));
        }
        let (lo, hi) = self.nu_range;
        if lo < 3 || hi < lo {
            return Err(DcsError::input(format!("invalid degrees-of-freedom range ({lo}, {hi})")));
        }
        if !(self.contaminant_nu > 2.0) {
            return Err(DcsError::input("contaminating degrees of freedom must exceed 2"));
        }
        if let Some(q) = &self.qbar {
            if q.dim() != self.p {
                return Err(DcsError::input("target correlation dimension does not match p"));
            }
            if q.min_eigenvalue() < -1e-8 {
                return Err(DcsError::input("target correlation is not positive semidefinite"));
            }
        }
        Ok(())
    }
}

/// Random target correlation: a normalised Wishart draw (scale matrix with
/// common correlation 0.3, `2p` degrees of freedom), shrunk toward the
/// identity just enough to keep the condition number at most 100.
pub fn random_correlation(p: usize, seed: u64) -> Result<CorrMatrix> {
    if p < 2 {
        return Err(DcsError::input("need p >= 2"));
    }
    let mut rng = substream(seed, "target-correlation", p as u64);
    let dof = 2 * p;
    let common: f64 = 0.3;
    let a = DMatrix::from_fn(p, dof, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    // factor structure: each column shares a common draw
    let mut g = a.clone();
    for k in 0..dof {
        let f: f64 = StandardNormal.sample(&mut rng);
        for i in 0..p {
            g[(i, k)] = common.sqrt() * f + (1.0 - common).sqrt() * a[(i, k)];
        }
    }
    let w = &g * g.transpose();
    let mut c = linalg::cov_to_corr(&w)?;
    let eig = nalgebra::SymmetricEigen::new(c.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if lmax / lmin.max(f64::MIN_POSITIVE) > MAX_TARGET_CONDITION {
        // ((1-s) lmax + s) / ((1-s) lmin + s) = cap
        let cap = MAX_TARGET_CONDITION;
        let s = (lmax - cap * lmin) / ((cap - 1.0) + (lmax - cap * lmin));
        c = &c * (1.0 - s) + DMatrix::<f64>::identity(p, p) * s;
    }
    for i in 0..p {
        c[(i, i)] = 1.0;
    }
    CorrMatrix::new(linalg::symmetrize(&c), CorrMethod::Pearson)
}

/// Unit-variance Student-t draw.
fn scaled_t(dist: &StudentT<f64>, nu: f64, rng: &mut Rng) -> f64 {
    dist.sample(rng) / (nu / (nu - 2.0)).sqrt()
}

/// Simulate returns `x_t = D H_t^{1/2} u_t` where `H_t` follows the DCC
/// recursion driven by its own lagged standardised draws and `u_t` has
/// independent unit-variance Student-t coordinates. `D` holds fixed daily
/// volatilities in [1%, 3%]. Contamination (if `delta > 0`) is applied
/// afterwards with [`contaminate`].
pub fn simulate_panel(cfg: &SimConfig) -> Result<ReturnPanel> {
    cfg.validate()?;
    let p = cfg.p;
    let qbar = match &cfg.qbar {
        Some(q) => q.clone(),
        None => random_correlation(p, cfg.seed)?,
    };
    let qb = qbar.values();
    let mut rng = substream(cfg.seed, "simulate", 0);
    let (lo, hi) = cfg.nu_range;
    let nus: Vec<f64> = (0..p).map(|_| f64::from(rng.random_range(lo..=hi))).collect();
    let dists: Vec<StudentT<f64>> = nus
        .iter()
        .map(|&nu| StudentT::new(nu).map_err(|e| DcsError::input(format!("student t: {e}"))))
        .collect::<Result<_>>()?;
    let vols: Vec<f64> = (0..p).map(|_| rng.random_range(0.01..0.03)).collect();

    let c = 1.0 - cfg.alpha_true - cfg.beta_true;
    let mut q = qb.clone();
    let mut raw = DMatrix::zeros(cfg.t_len, p);
    for t in 0..cfg.t_len {
        let dq = DVector::from_iterator(p, (0..p).map(|i| q[(i, i)].sqrt().recip()));
        let r = DMatrix::from_fn(p, p, |i, j| q[(i, j)] * dq[i] * dq[j]);
        let root = linalg::sym_sqrt(&r);
        let u = DVector::from_iterator(p, (0..p).map(|i| scaled_t(&dists[i], nus[i], &mut rng)));
        let z = root * u;
        for i in 0..p {
            raw[(t, i)] = vols[i] * z[i];
        }
        for j in 0..p {
            for i in 0..p {
                q[(i, j)] = c * qb[(i, j)] + cfg.alpha_true * z[i] * z[j] + cfg.beta_true * q[(i, j)];
            }
        }
    }
    let panel = ReturnPanel::from_matrix(raw)?;
    if cfg.delta > 0.0 {
        contaminate(&panel, cfg.delta, cfg.contaminant_nu, child_seed(cfg.seed, "contaminate", 0))
    } else {
        Ok(panel)
    }
}

/// Number of entries replaced by [`contaminate`]: `⌊δ·T·p⌋`.
pub fn contamination_count(delta: f64, t_len: usize, p: usize) -> usize {
    // guard against 0.1 * 50_000 = 4999.999...
    (delta * (t_len * p) as f64 + 1e-9).floor() as usize
}

/// Replace exactly `⌊δ·T·p⌋` randomly chosen entries with unit-variance
/// `t_ν` draws rescaled to the column's standard deviation.
///
/// Only the chosen entries change; the panel is not re-demeaned.
pub fn contaminate(panel: &ReturnPanel, delta: f64, contaminant_nu: f64, seed: u64) -> Result<ReturnPanel> {
    if !(0.0..1.0).contains(&delta) {
        return Err(DcsError::input(format!("delta {delta} outside [0, 1)")));
    }
    if !(contaminant_nu > 2.0) {
        return Err(DcsError::input("contaminating degrees of freedom must exceed 2"));
    }
    let (t, p) = panel.returns.shape();
    let count = contamination_count(delta, t, p);
    let mut out = panel.clone();
    if count == 0 {
        return Ok(out);
    }
    let sds: Vec<f64> = (0..p)
        .map(|j| (panel.returns.column(j).norm_squared() / t as f64).sqrt())
        .collect();
    let mut rng = substream(seed, "contaminate", 0);
    let dist = StudentT::new(contaminant_nu).map_err(|e| DcsError::input(format!("student t: {e}")))?;
    let mut positions = index::sample(&mut rng, t * p, count).into_vec();
    positions.sort_unstable();
    for pos in positions {
        let (i, j) = (pos % t, pos / t);
        out.returns[(i, j)] = sds[j] * scaled_t(&dist, contaminant_nu, &mut rng);
    }
    Ok(out)
}

/// Cells of the Monte Carlo study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyGrid {
    pub ps: Vec<usize>,
    pub ts: Vec<usize>,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyOptions {
    pub alpha_true: f64,
    pub beta_true: f64,
    pub nu_range: (u32, u32),
    pub contaminant_nu: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            alpha_true: 0.02,
            beta_true: 0.97,
            nu_range: (4, 8),
            contaminant_nu: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub failures: usize,
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (Some(m), None);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(m), Some(var.sqrt()))
}

impl EstimatorSummary {
    pub fn alpha_mean(&self) -> Option<f64> {
        mean_sd(&self.alphas).0
    }
    pub fn alpha_sd(&self) -> Option<f64> {
        mean_sd(&self.alphas).1
    }
    pub fn beta_mean(&self) -> Option<f64> {
        mean_sd(&self.betas).0
    }
    pub fn beta_sd(&self) -> Option<f64> {
        mean_sd(&self.betas).1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyCell {
    pub p: usize,
    pub t_len: usize,
    pub delta: f64,
    pub results: Vec<EstimatorSummary>,
}

impl StudyCell {
    pub fn summary(&self, estimator: Estimator) -> Option<&EstimatorSummary> {
        self.results.iter().find(|s| s.estimator == estimator)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyTable {
    pub estimators: Vec<Estimator>,
    pub replications: usize,
    pub cells: Vec<StudyCell>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"))
}

impl StudyTable {
    /// CSV laid out like the published tables: one block per (δ, p), a mean
    /// row and an `s.d.` row per T, two columns (α, β) per estimator.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["delta".to_string(), "p".to_string(), "T".to_string()];
        for e in &self.estimators {
            header.push(format!("{} alpha", e.label()));
            header.push(format!("{} beta", e.label()));
        }
        w.write_record(&header)?;
        let mut cells: Vec<&StudyCell> = self.cells.iter().collect();
        cells.sort_by(|a, b| {
            a.delta
                .total_cmp(&b.delta)
                .then(a.p.cmp(&b.p))
                .then(a.t_len.cmp(&b.t_len))
        });
        for cell in cells {
            let mut mean_row = vec![format!("{}", cell.delta), cell.p.to_string(), cell.t_len.to_string()];
            let mut sd_row = vec![format!("{}", cell.delta), cell.p.to_string(), "s.d.".to_string()];
            for e in &self.estimators {
                match cell.summary(*e) {
                    Some(s) => {
                        mean_row.push(fmt_opt(s.alpha_mean()));
                        mean_row.push(fmt_opt(s.beta_mean()));
                        sd_row.push(fmt_opt(s.alpha_sd()));
                        sd_row.push(fmt_opt(s.beta_sd()));
                    }
                    None => {
                        mean_row.extend(["NA".to_string(), "NA".to_string()]);
                        sd_row.extend(["NA".to_string(), "NA".to_string()]);
                    }
                }
            }
            w.write_record(&mean_row)?;
            w.write_record(&sd_row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell_index(p: usize, t_len: usize, delta: f64) -> u64 {
    (p as u64) << 40 ^ (t_len as u64) << 16 ^ (delta * 10_000.0).round() as u64
}

/// Per-estimator `(α̂, β̂)` of one replication; `None` marks a failed fit.
type ReplicationFits = Vec<Option<(f64, f64)>>;

/// Simulate, contaminate and refit every estimator `replications` times in
/// each grid cell. Failed fits are counted, not fatal.
pub fn monte_carlo_study(
    grid: &StudyGrid,
    replications: usize,
    estimators: &[Estimator],
    seed: u64,
    options: &StudyOptions,
) -> Result<StudyTable> {
    if replications < 1 {
        return Err(DcsError::input("need at least one replication"));
    }
    if estimators.is_empty() {
        return Err(DcsError::input("need at least one estimator"));
    }
    let mut cells = Vec::new();
    for &p in &grid.ps {
        let qbar = random_correlation(p, child_seed(seed, "study-target", p as u64))?;
        for &t_len in &grid.ts {
            for &delta in &grid.deltas {
                let idx = cell_index(p, t_len, delta);
                let reps: Vec<Result<ReplicationFits>> = (0..replications)
                    .into_par_iter()
                    .map(|r| {
                        let cfg = SimConfig {
                            p,
                            t_len,
                            alpha_true: options.alpha_true,
                            beta_true: options.beta_true,
                            nu_range: options.nu_range,
                            delta,
                            contaminant_nu: options.contaminant_nu,
                            qbar: Some(qbar.clone()),
                            seed: child_seed(seed, "study-rep", idx.wrapping_mul(1_000_003) + r as u64),
                        };
                        let panel = simulate_panel(&cfg)?;
                        Ok(estimators
                            .iter()
                            .map(|&e| match fit_estimator(&panel, e, false) {
                                Ok(m) => Some((m.params.alpha, m.params.beta)),
                                Err(err) => {
                                    log::warn!("p={p} T={t_len} delta={delta} rep={r} {e}: {err}");
                                    None
                                }
                            })
                            .collect())
                    })
                    .collect();
                let mut results: Vec<EstimatorSummary> = estimators
                    .iter()
                    .map(|&e| EstimatorSummary {
                        estimator: e,
                        alphas: Vec::new(),
                        betas: Vec::new(),
                        failures: 0,
                    })
                    .collect();
                for rep in reps {
                    for (k, fit) in rep?.into_iter().enumerate() {
                        match fit {
                            Some((a, b)) => {
                                results[k].alphas.push(a);
                                results[k].betas.push(b);
                            }
                            None => results[k].failures += 1,
                        }
                    }
                }
                cells.push(StudyCell {
                    p,
                    t_len,
                    delta,
                    results,
                });
            }
        }
    }
    Ok(StudyTable {
        estimators: estimators.to_vec(),
        replications,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(1, 100, 0).validate().is_err());
        let mut c = SimConfig::new(3, 100, 0);
        c.delta = 1.0;
        assert!(c.validate().is_err());
        let mut c = SimConfig::new(3, 100, 0);
        c.alpha_true = 0.1;
        c.beta_true = 0.9;
        assert!(c.validate().is_err());
        let mut c = SimConfig::new(3, 100, 0);
        c.nu_range = (2, 5);
        assert!(c.validate().is_err());
    }

    #[test]
    fn generated_target_is_a_capped_correlation() {
        for p in [2, 5, 30] {
            let c = random_correlation(p, 11).unwrap();
            let eig = nalgebra::SymmetricEigen::new(c.values().clone());
            assert!(eig.eigenvalues.min() > 0.0);
            assert!(eig.eigenvalues.max() / eig.eigenvalues.min() <= MAX_TARGET_CONDITION * (1.0 + 1e-9));
        }
    }

    #[test]
    fn non_psd_target_rejected() {
        let bad = CorrMatrix::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]),
            CorrMethod::Pearson,
        )
        .unwrap();
        let mut c = SimConfig::new(3, 50, 1);
        c.qbar = Some(bad);
        assert!(matches!(simulate_panel(&c), Err(DcsError::Input(_))));
    }

    #[test]
    fn contamination_count_contract() {
        assert_eq!(contamination_count(0.10, 1000, 50), 5000);
        assert_eq!(contamination_count(0.0, 1000, 50), 0);
        assert_eq!(contamination_count(0.01, 123, 7), 8);
    }

    #[test]
    fn mean_sd_degenerate() {
        assert_eq!(mean_sd(&[]), (None, None));
        assert_eq!(mean_sd(&[0.5]), (Some(0.5), None));
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((s.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
