//! Price-panel loading (wide or long CSV), cleaning and conversion to
//! demeaned log returns.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{Days, NaiveDate, Weekday, Datelike};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DcsError, Result};

/// T×p matrix of demeaned daily log returns.
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// Demeaned returns, one row per date.
    pub returns: DMatrix<f64>,
    /// Column means removed by demeaning.
    pub means: Vec<f64>,
}

impl ReturnPanel {
    /// Build a panel from raw returns, removing the full-sample column mean.
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, raw: DMatrix<f64>) -> Result<Self> {
        let (t, p) = raw.shape();
        if dates.len() != t || tickers.len() != p {
            return Err(DcsError::input(format!(
                "panel shape {t}x{p} does not match {} dates / {} tickers",
                dates.len(),
                tickers.len()
            )));
        }
        if let Some(w) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DcsError::input(format!(
                "dates not strictly increasing at {}",
                dates[w + 1]
            )));
        }
        if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % t, pos / t);
            return Err(DcsError::input(format!(
                "non-finite return for {} on {}",
                tickers[c], dates[r]
            )));
        }
        let means: Vec<f64> = (0..p).map(|j| raw.column(j).mean()).collect();
        let returns = DMatrix::from_fn(t, p, |i, j| raw[(i, j)] - means[j]);
        Ok(Self {
            dates,
            tickers,
            returns,
            means,
        })
    }

    /// Panel with synthetic business-day dates starting 2000-01-03.
    pub fn from_matrix(raw: DMatrix<f64>) -> Result<Self> {
        let (t, p) = raw.shape();
        let tickers = (0..p).map(|j| format!("A{:03}", j + 1)).collect();
        Self::new(business_days(t), tickers, raw)
    }

    pub fn len(&self) -> usize {
        self.returns.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.returns.ncols()
    }

    /// Raw (un-demeaned) return at `(t, j)`.
    pub fn raw_return(&self, t: usize, j: usize) -> f64 {
        self.returns[(t, j)] + self.means[j]
    }

    /// Rows `start..end`, re-demeaned on the window. The window's own means
    /// are combined with the parent means so raw returns are preserved.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(DcsError::input(format!(
                "window {start}..{end} outside panel of length {}",
                self.len()
            )));
        }
        let p = self.dim();
        let raw = DMatrix::from_fn(end - start, p, |i, j| self.raw_return(start + i, j));
        Self::new(self.dates[start..end].to_vec(), self.tickers.clone(), raw)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.returns.column(j).iter().copied().collect()
    }
}

/// `n` consecutive weekdays from 2000-01-03.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceFormat {
    /// `date,TICKER1,TICKER2,...`
    WideCsv,
    /// `date,ticker,price`
    LongCsv,
}

impl FromStr for PriceFormat {
    type Err = DcsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wide" | "wide_csv" => Ok(Self::WideCsv),
            "long" | "long_csv" => Ok(Self::LongCsv),
            other => Err(DcsError::input(format!("unknown price format '{other}'"))),
        }
    }
}

/// Rectangular price panel; `None` marks an explicit gap (empty or `NA`
/// cell) to be handled by a [`CleaningPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `prices[t][j]`
    pub prices: Vec<Vec<Option<f64>>>,
}

impl PricePanel {
    /// Prices starting at 100 that reproduce the panel's raw log returns.
    pub fn from_returns(panel: &ReturnPanel) -> Self {
        let p = panel.dim();
        let mut level = vec![100.0_f64; p];
        let mut dates = Vec::with_capacity(panel.len() + 1);
        let first = panel.dates.first().copied().unwrap_or_default();
        dates.push(first - Days::new(1));
        dates.extend_from_slice(&panel.dates);
        let mut prices = vec![level.iter().map(|&v| Some(v)).collect::<Vec<_>>()];
        for t in 0..panel.len() {
            for (j, l) in level.iter_mut().enumerate() {
                *l *= panel.raw_return(t, j).exp();
            }
            prices.push(level.iter().map(|&v| Some(v)).collect());
        }
        Self {
            dates,
            tickers: panel.tickers.clone(),
            prices,
        }
    }

    pub fn write_wide<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.tickers.iter().cloned());
        w.write_record(&header)?;
        for (d, row) in self.dates.iter().zip(&self.prices) {
            let mut rec = vec![d.to_string()];
            rec.extend(row.iter().map(|v| match v {
                Some(x) => format!("{x:.10}"),
                None => String::new(),
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| DcsError::input(format!("line {line}: bad date '{s}': {e}")))
}

fn parse_price(s: &str, line: u64) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("null") {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|e| DcsError::input(format!("line {line}: bad price '{s}': {e}")))
}

/// Load a price CSV. A row with fewer fields than the header (or, for the
/// long layout, an absent date/ticker combination) is a missing cell and an
/// error; an empty or `NA` field is a gap.
pub fn load_prices(path: impl AsRef<Path>, format: PriceFormat) -> Result<PricePanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| DcsError::input(format!("cannot open {}: {e}", path.display())))?;
    match format {
        PriceFormat::WideCsv => read_wide(file),
        PriceFormat::LongCsv => read_long(file),
    }
}

pub fn read_wide<R: std::io::Read>(reader: R) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).comment(Some(b'#')).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(DcsError::input("wide CSV needs a date column and at least one ticker"));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = parse_date(rec.get(0).unwrap_or(""), line)?;
        if rec.len() < header.len() {
            return Err(DcsError::input(format!(
                "line {line}: missing cell for ticker {} on {date}",
                tickers[rec.len().saturating_sub(1)]
            )));
        }
        if rec.len() > header.len() {
            return Err(DcsError::input(format!("line {line}: too many fields")));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| parse_price(s, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push((date, vals));
    }
    finish_rows(tickers, rows)
}

pub fn read_long<R: std::io::Read>(reader: R) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut tickers: Vec<String> = Vec::new();
    let mut ticker_idx: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(NaiveDate, usize), Option<f64>> = HashMap::new();
    let mut dates: Vec<NaiveDate> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(DcsError::input(format!("line {line}: expected date,ticker,price")));
        }
        let date = parse_date(&rec[0], line)?;
        let ticker = rec[1].trim().to_string();
        let price = parse_price(&rec[2], line)?;
        let j = *ticker_idx.entry(ticker.clone()).or_insert_with(|| {
            tickers.push(ticker.clone());
            tickers.len() - 1
        });
        if cells.insert((date, j), price).is_some() {
            return Err(DcsError::input(format!(
                "line {line}: duplicate entry for {ticker} on {date}"
            )));
        }
        dates.push(date);
    }
    dates.sort();
    dates.dedup();
    let mut prices = Vec::with_capacity(dates.len());
    for d in &dates {
        let mut row = Vec::with_capacity(tickers.len());
        for (j, tk) in tickers.iter().enumerate() {
            match cells.get(&(*d, j)) {
                Some(v) => row.push(*v),
                None => {
                    return Err(DcsError::input(format!("missing cell for ticker {tk} on {d}")))
                }
            }
        }
        prices.push(row);
    }
    Ok(PricePanel {
        dates,
        tickers,
        prices,
    })
}

fn finish_rows(tickers: Vec<String>, mut rows: Vec<(NaiveDate, Vec<Option<f64>>)>) -> Result<PricePanel> {
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(DcsError::input(format!("duplicate rows for date {}", w[0].0)));
    }
    let (dates, prices) = rows.into_iter().unzip();
    Ok(PricePanel {
        dates,
        tickers,
        prices,
    })
}

/// How gaps in the price panel are handled before differencing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningPolicy {
    /// Drop every date with at least one gap.
    #[default]
    DropIncompleteRows,
    /// Carry the last price over runs of at most `max_k` consecutive gaps;
    /// dates still incomplete afterwards are dropped.
    ForwardFill { max_k: usize },
}

impl fmt::Display for CleaningPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DropIncompleteRows => f.write_str("drop_incomplete_rows"),
            Self::ForwardFill { max_k } => write!(f, "forward_fill_max_k={max_k}"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CleaningReport {
    pub filled_cells: usize,
    pub dropped_dates: Vec<NaiveDate>,
}

/// Log returns `ln(P_t / P_{t-1})` after applying `policy`, demeaned per
/// column.
pub fn to_returns(prices: &PricePanel, policy: CleaningPolicy) -> Result<(ReturnPanel, CleaningReport)> {
    let p = prices.tickers.len();
    let mut grid = prices.prices.clone();
    for (t, row) in grid.iter().enumerate() {
        if row.len() != p {
            return Err(DcsError::input(format!("row {t} has {} cells, expected {p}", row.len())));
        }
        for (j, v) in row.iter().enumerate() {
            if let Some(x) = v {
                if !(*x > 0.0) || !x.is_finite() {
                    return Err(DcsError::input(format!(
                        "nonpositive price {x} for {} on {}",
                        prices.tickers[j], prices.dates[t]
                    )));
                }
            }
        }
    }

    let mut report = CleaningReport::default();
    if let CleaningPolicy::ForwardFill { max_k } = policy {
        for j in 0..p {
            let mut t = 0;
            while t < grid.len() {
                if grid[t][j].is_some() {
                    t += 1;
                    continue;
                }
                let start = t;
                while t < grid.len() && grid[t][j].is_none() {
                    t += 1;
                }
                let run = t - start;
                if start > 0 && run <= max_k {
                    let last = grid[start - 1][j];
                    for row in grid.iter_mut().take(t).skip(start) {
                        row[j] = last;
                    }
                    report.filled_cells += run;
                }
            }
        }
    }

    let mut dates = Vec::new();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for (d, row) in prices.dates.iter().zip(&grid) {
        if row.iter().all(Option::is_some) {
            dates.push(*d);
            kept.push(row.iter().map(|v| v.expect("checked")).collect());
        } else {
            report.dropped_dates.push(*d);
        }
    }
    if kept.len() < 2 {
        return Err(DcsError::input(format!(
            "only {} complete price rows after cleaning; need at least 2",
            kept.len()
        )));
    }
    if !report.dropped_dates.is_empty() || report.filled_cells > 0 {
        log::info!(
            "cleaning ({policy}): filled {} cells, dropped {} dates",
            report.filled_cells,
            report.dropped_dates.len()
        );
    }

    let t = kept.len() - 1;
    let raw = DMatrix::from_fn(t, p, |i, j| (kept[i + 1][j] / kept[i][j]).ln());
    let panel = ReturnPanel::new(dates[1..].to_vec(), prices.tickers.clone(), raw)?;
    Ok((panel, report))
}
