use std::path::PathBuf;

use dcs_core::dcs::{fit_estimator, model_loglik_aic_bic, Estimator};
use dcs_core::diagnostics::{
    default_block_len, jarque_bera, jarque_bera_panel, ks_test, moment_matched_nu, portmanteau, sharpe_diff_bootstrap,
    two_sample_t, variance_f, KsReference, TestResult,
};
use dcs_core::garch::fit_garch11;
use dcs_core::ingest::{load_prices, to_returns, CleaningPolicy, PriceFormat, PricePanel};
use dcs_core::portfolio::{performance_metrics, rolling_backtest, BacktestConfig, PortfolioEstimator, Sparsity, TurnoverMode};
use dcs_core::risk::{coverage_report, portfolio_risk_path, CoverageReport, DEFAULT_DQ_LAGS};
use dcs_core::rng::child_seed;
use dcs_core::simulate::{monte_carlo_study, simulate_panel, SimConfig, StudyGrid, StudyOptions};
use dcs_core::{DcsError, ReturnPanel};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::{CliError, CliResult, RunConfig};

pub type MethodChoice = PortfolioEstimator;

/// Comma-separated estimator names; `ew` selects equal weights.
pub fn parse_methods(s: &str) -> CliResult<Vec<MethodChoice>> {
    let methods = s
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| m.parse::<PortfolioEstimator>().map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(CliError::usage("no estimator given"));
    }
    Ok(methods)
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<Vec<T>> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| CliError::usage(format!("grid: invalid {key} value '{x}'")))
        })
        .collect()
}

/// `p=10,50 T=1000,2000 delta=0.01,0.1` (whitespace or `;` separated).
pub fn parse_grid(s: &str) -> CliResult<StudyGrid> {
    let (mut ps, mut ts, mut deltas) = (None, None, None);
    for token in s.split(|c: char| c.is_whitespace() || c == ';').filter(|t| !t.is_empty()) {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("grid: expected key=value, got '{token}'")))?;
        match k {
            "p" => ps = Some(parse_list::<usize>("p", v)?),
            "T" | "t" => ts = Some(parse_list::<usize>("T", v)?),
            "delta" => deltas = Some(parse_list::<f64>("delta", v)?),
            other => return Err(CliError::usage(format!("grid: unknown key '{other}'"))),
        }
    }
    let missing = |name: &str| CliError::usage(format!("grid: missing {name}"));
    Ok(StudyGrid {
        ps: ps.ok_or_else(|| missing("p"))?,
        ts: ts.ok_or_else(|| missing("T"))?,
        deltas: deltas.ok_or_else(|| missing("delta"))?,
    })
}

fn parse_policy(s: &str) -> CliResult<CleaningPolicy> {
    if s == "drop" {
        return Ok(CleaningPolicy::DropIncompleteRows);
    }
    s.strip_prefix("ffill=")
        .and_then(|k| k.parse().ok())
        .map(|max_k| CleaningPolicy::ForwardFill { max_k })
        .ok_or_else(|| CliError::usage(format!("unknown cleaning policy '{s}' (use drop or ffill=<k>)")))
}

fn load_panel(cfg: &RunConfig) -> CliResult<ReturnPanel> {
    let path = cfg.require_input()?;
    let format: PriceFormat = cfg.format.parse()?;
    let prices = load_prices(path, format)?;
    let (panel, report) = to_returns(&prices, parse_policy(&cfg.policy)?)?;
    log::info!(
        "{}: {} dates x {} tickers ({} filled, {} dropped)",
        path.display(),
        panel.len(),
        panel.dim(),
        report.filled_cells,
        report.dropped_dates.len()
    );
    Ok(panel)
}

struct Outputs<'a> {
    cfg: &'a RunConfig,
    written: Vec<PathBuf>,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Self {
            cfg,
            written: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.cfg.out.join(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    /// CSV body produced by `body`, preceded by the config header.
    fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> dcs_core::Result<()>) -> CliResult<()> {
        let mut buf = self.cfg.csv_header().into_bytes();
        body(&mut buf)?;
        self.write(name, &buf)
    }

    fn json(&mut self, name: &str, mut value: Value) -> CliResult<()> {
        if let Value::Object(map) = &mut value {
            map.insert("config".to_string(), self.cfg.to_json());
        }
        let mut bytes = serde_json::to_vec_pretty(&value).map_err(DcsError::from)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

fn test_json(r: &TestResult) -> Value {
    json!({ "statistic": r.statistic, "df": r.df, "p_value": r.p_value, "note": r.note })
}

pub fn fit(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let panel = load_panel(cfg)?;
    let methods = parse_methods(&cfg.method)?;
    let estimator = match methods.as_slice() {
        [PortfolioEstimator::Model(e)] => *e,
        _ => return Err(CliError::usage("fit takes exactly one model estimator (dcc, dcc-ls, dcs-tau, dcs-rho)")),
    };
    let model = fit_estimator(&panel, estimator, false)?;
    let crit = model_loglik_aic_bic(&model)?;
    // DCC is checked on standardised residuals, DCS on its normal scores
    let scores = &model.score_panel.scores;
    let jb = jarque_bera_panel(scores)?;
    let port = portmanteau(scores, cfg.lags, 0)?;
    let garch: Vec<Value> = panel
        .tickers
        .iter()
        .zip(&model.garch_fits)
        .map(|(t, f)| json!({ "ticker": t, "omega": f.params.omega, "alpha": f.params.alpha1, "beta": f.params.beta1 }))
        .collect();
    let summary = json!({
        "method": estimator.to_string(),
        "label": estimator.label(),
        "alpha": model.params.alpha,
        "beta": model.params.beta,
        "loglik": crit.loglik,
        "aic": crit.aic,
        "bic": crit.bic,
        "n_params": crit.n_params,
        "n_obs": crit.n_obs,
        "p": panel.dim(),
        "jb": { "sum": jb.sum, "per_series": jb.per_series.iter().map(test_json).collect::<Vec<_>>() },
        "portmanteau": test_json(&port),
        "target_repaired": model.qbar_repaired,
        "garch": garch,
    });
    let mut out = Outputs::new(cfg);
    out.json("fit_summary.json", summary)?;
    if cfg.write_path {
        let path = model.correlation_path()?;
        let p = panel.dim();
        out.csv("correlation_path.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            let mut header = vec!["date".to_string()];
            for j in 1..p {
                for i in 0..j {
                    header.push(format!("{}|{}", panel.tickers[i], panel.tickers[j]));
                }
            }
            w.write_record(&header)?;
            for (t, r) in path.r.iter().enumerate() {
                let mut row = vec![panel.dates[t].to_string()];
                for j in 1..p {
                    for i in 0..j {
                        row.push(format!("{:.8}", r[(i, j)]));
                    }
                }
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    Ok(out.written)
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let grid = parse_grid(&cfg.grid)?;
    let mut out = Outputs::new(cfg);
    if cfg.panel {
        let (p, t, delta) = match (grid.ps.first(), grid.ts.first(), grid.deltas.first()) {
            (Some(&p), Some(&t), Some(&d)) => (p, t, d),
            _ => return Err(CliError::usage("grid needs at least one p, T and delta")),
        };
        let mut sim = SimConfig::new(p, t, child_seed(cfg.seed, "cli-panel", 0));
        sim.delta = delta;
        let panel = simulate_panel(&sim)?;
        let prices = PricePanel::from_returns(&panel);
        out.csv("panel.csv", |buf| prices.write_wide(buf))?;
        return Ok(out.written);
    }
    let estimators: Vec<Estimator> = parse_methods(&cfg.method)?
        .into_iter()
        .map(|m| match m {
            PortfolioEstimator::Model(e) => Ok(e),
            PortfolioEstimator::EqualWeight => Err(CliError::usage("the study has no equal-weight estimator")),
        })
        .collect::<CliResult<_>>()?;
    let table = monte_carlo_study(&grid, cfg.reps, &estimators, cfg.seed, &StudyOptions::default())?;
    out.csv("study.csv", |buf| table.write_csv(buf))?;
    Ok(out.written)
}

fn risk_rows(w: &mut csv::Writer<&mut Vec<u8>>, label: &str, measure: &str, r: &CoverageReport) -> dcs_core::Result<()> {
    w.write_record([
        label.to_string(),
        measure.to_string(),
        format!("{:.6}", r.failure_rate),
        format!("{:.6}", r.uc.statistic),
        format!("{:.6}", r.uc.p_value),
        format!("{:.6}", r.cc.statistic),
        format!("{:.6}", r.cc.p_value),
        format!("{:.6}", r.dq.statistic),
        format!("{:.6}", r.dq.p_value),
    ])?;
    Ok(())
}

const RISK_HEADER: [&str; 9] = [
    "estimator", "measure", "fail_rate", "uc_stat", "uc_p", "cc_stat", "cc_p", "dq_stat", "dq_p",
];

pub fn backtest(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let panel = load_panel(cfg)?;
    let methods = parse_methods(&cfg.method)?;
    let sparsity: Sparsity = cfg.sparsity.parse()?;
    let mode: TurnoverMode = cfg.turnover.parse()?;
    let mut out = Outputs::new(cfg);

    let mut ledgers = Vec::new();
    let mut perfs = Vec::new();
    for &m in &methods {
        let mut bc = BacktestConfig::new(cfg.window, cfg.holding, m);
        bc.sparsity = sparsity.clone();
        bc.seed = child_seed(cfg.seed, "backtest", 0);
        let ledger = rolling_backtest(&panel, &bc)?;
        out.csv(&format!("ledger_{m}.csv"), |buf| ledger.write_csv(buf))?;
        perfs.push(performance_metrics(&ledger, mode)?);
        ledgers.push(ledger);
    }
    out.csv("metrics.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["estimator", "AV", "SD", "SR", "TO", "failures"])?;
        for p in &perfs {
            w.write_record([
                p.estimator.clone(),
                format!("{:.4}", p.av),
                format!("{:.4}", p.sd),
                format!("{:.4}", p.sr),
                format!("{:.4}", p.to),
                p.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;

    let mut risk_json = Vec::new();
    let mut risk_reports = Vec::new();
    for (m, ledger) in methods.iter().zip(&ledgers) {
        if ledger.returns.len() < 200 {
            log::warn!("{m}: {} out-of-sample days, risk backtest skipped", ledger.returns.len());
            continue;
        }
        let path = portfolio_risk_path(&ledger.returns, cfg.alpha)?;
        let var = coverage_report(&path.violations, &path.var, cfg.alpha, DEFAULT_DQ_LAGS)?;
        let es = coverage_report(&path.es_violations, &path.es, cfg.alpha, DEFAULT_DQ_LAGS)?;
        out.csv(&format!("risk_{m}.csv"), |buf| path.write_csv(buf, Some(&ledger.dates)))?;
        risk_json.push(json!({ "estimator": m.label(), "var": var, "es": es }));
        risk_reports.push((m.label(), var, es));
    }
    out.csv("risk_backtest.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(RISK_HEADER)?;
        for (label, var, es) in &risk_reports {
            risk_rows(&mut w, label, "VaR", var)?;
            risk_rows(&mut w, label, "ES", es)?;
        }
        w.flush()?;
        Ok(())
    })?;

    let mut rows = Vec::new();
    for i in 0..ledgers.len() {
        for j in i + 1..ledgers.len() {
            let (a, b) = (&ledgers[i].returns, &ledgers[j].returns);
            let t = two_sample_t(a, b)?;
            let f = variance_f(a, b)?;
            let sr = if a.len() >= 200 {
                let seed = child_seed(cfg.seed, "sharpe", (i * ledgers.len() + j) as u64);
                Some(sharpe_diff_bootstrap(a, b, default_block_len(a.len()), cfg.boots, seed)?)
            } else {
                None
            };
            rows.push((format!("{} vs {}", methods[i].label(), methods[j].label()), t, f, sr));
        }
    }
    out.csv("comparisons.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["comparison", "t", "t_p", "F", "F_p", "delta_sr_annual", "sr_p"])?;
        for (name, t, f, sr) in &rows {
            let (dsr, srp) = sr.as_ref().map_or(("NA".to_string(), "NA".to_string()), |s| {
                (format!("{:.6}", s.statistic * 252f64.sqrt()), format!("{:.6}", s.p_value))
            });
            w.write_record([
                name.clone(),
                format!("{:.6}", t.statistic),
                format!("{:.6}", t.p_value),
                format!("{:.6}", f.statistic),
                format!("{:.6}", f.p_value),
                dsr,
                srp,
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.json(
        "backtest_summary.json",
        json!({ "performance": perfs, "risk": risk_json }),
    )?;
    Ok(out.written)
}

fn read_return_series(path: &std::path::Path) -> CliResult<(Vec<String>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(DcsError::from)?;
    let headers = rdr.headers().map_err(DcsError::from)?.clone();
    let col = headers
        .iter()
        .position(|h| h == "return")
        .ok_or_else(|| CliError::usage(format!("{} has no 'return' column", path.display())))?;
    let date_col = headers.iter().position(|h| h == "date");
    let (mut dates, mut values) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(DcsError::from)?;
        let line = rec.position().map_or(0, |p| p.line());
        let v: f64 = rec
            .get(col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| CliError::usage(format!("line {line}: invalid return")))?;
        values.push(v);
        dates.push(date_col.and_then(|c| rec.get(c)).unwrap_or("").to_string());
    }
    Ok((dates, values))
}

pub fn risk(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let path = cfg.require_input()?;
    let (dates, returns) = read_return_series(path)?;
    let rp = portfolio_risk_path(&returns, cfg.alpha)?;
    let var = coverage_report(&rp.violations, &rp.var, cfg.alpha, DEFAULT_DQ_LAGS)?;
    let es = coverage_report(&rp.es_violations, &rp.es, cfg.alpha, DEFAULT_DQ_LAGS)?;
    let parsed: Option<Vec<chrono::NaiveDate>> = dates.iter().map(|d| d.parse().ok()).collect();
    let mut out = Outputs::new(cfg);
    out.csv("risk_path.csv", |buf| rp.write_csv(buf, parsed.as_deref()))?;
    out.json(
        "risk_report.json",
        json!({ "n": returns.len(), "garch": rp.garch, "var": var, "es": es }),
    )?;
    Ok(out.written)
}

pub fn report(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let panel = load_panel(cfg)?;
    let (t, p) = panel.returns.shape();
    let fits = (0..p)
        .map(|j| fit_garch11(&panel.column(j), false))
        .collect::<dcs_core::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (j, f) in fits.iter().enumerate() {
        let e = &f.residuals;
        let jb = jarque_bera(e)?;
        let n = e.len() as f64;
        let mean = e.iter().sum::<f64>() / n;
        let sd = (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let ks_n = ks_test(e, KsReference::Normal { mean, sd })?;
        let nu = moment_matched_nu(e)?;
        let ks_t = match nu {
            Some(nu) => Some(ks_test(e, KsReference::StudentT { nu })?),
            None => None,
        };
        series.push(json!({
            "ticker": panel.tickers[j],
            "jarque_bera": test_json(&jb),
            "ks_normal": test_json(&ks_n),
            "nu": nu,
            "ks_student_t": ks_t.as_ref().map(test_json),
        }));
        rows.push((panel.tickers[j].clone(), jb, ks_n, nu, ks_t));
    }
    let resid = DMatrix::from_fn(t, p, |i, j| fits[j].residuals[i]);
    let port = portmanteau(&resid, cfg.lags, 0)?;
    let mut out = Outputs::new(cfg);
    out.csv("report.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["ticker", "jb", "jb_p", "ks_normal", "ks_normal_p", "nu", "ks_t", "ks_t_p"])?;
        let na = || "NA".to_string();
        for (ticker, jb, ks_n, nu, ks_t) in &rows {
            w.write_record([
                ticker.clone(),
                format!("{:.6}", jb.statistic),
                format!("{:.6}", jb.p_value),
                format!("{:.6}", ks_n.statistic),
                format!("{:.6}", ks_n.p_value),
                nu.map_or_else(na, |v| format!("{v:.4}")),
                ks_t.as_ref().map_or_else(na, |r| format!("{:.6}", r.statistic)),
                ks_t.as_ref().map_or_else(na, |r| format!("{:.6}", r.p_value)),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.json(
        "report.json",
        json!({ "series": series, "portmanteau": test_json(&port) }),
    )?;
    Ok(out.written)
}
