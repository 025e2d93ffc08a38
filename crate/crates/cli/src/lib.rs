//! Command-line front end: argument and config-file handling, command
//! dispatch, and the mapping from errors to exit codes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dcs_core::DcsError;
use thiserror::Error;

mod commands;

pub use commands::{parse_grid, parse_methods, MethodChoice};

#[derive(Debug, Parser)]
#[command(name = "dcs", version, about = "Dynamic conditional correlation and rank-based copula models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit a model to a price panel and write a summary with diagnostics.
    Fit,
    /// Run the Monte Carlo recovery study, or write one simulated price panel.
    Simulate,
    /// Rolling GMV backtest with performance, risk and comparison tables.
    Backtest,
    /// VaR/ES path and coverage tests for a portfolio return series.
    Risk,
    /// Distributional diagnostics of GARCH residuals for a price panel.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Simulate => "simulate",
            Command::Backtest => "backtest",
            Command::Risk => "risk",
            Command::Report => "report",
        }
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Input CSV (prices; for `risk`, a series with a `return` column).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Price layout: wide or long.
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Estimator(s): dcc, dcc-ls, dcs-tau, dcs-rho, ew (comma separated).
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Estimation window in days.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Days between rebalances.
    #[arg(long, global = true)]
    pub holding: Option<usize>,
    /// VaR/ES coverage level.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Study grid, e.g. `p=10,50 T=1000 delta=0.01,0.1`.
    #[arg(long, global = true, num_args = 1..)]
    pub grid: Option<Vec<String>>,
    /// Replications per study cell.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// none, lambda=<v> or stars.
    #[arg(long, global = true)]
    pub sparsity: Option<String>,
    /// Turnover convention: drifted or raw.
    #[arg(long, global = true)]
    pub turnover: Option<String>,
    /// Gap handling: drop or ffill=<k>.
    #[arg(long, global = true)]
    pub policy: Option<String>,
    /// Portmanteau lags.
    #[arg(long, global = true)]
    pub lags: Option<usize>,
    /// Bootstrap replicates for the Sharpe comparison.
    #[arg(long, global = true)]
    pub boots: Option<usize>,
    /// Write the filtered correlation path (fit).
    #[arg(long, global = true)]
    pub write_path: bool,
    /// Write a single simulated price panel instead of running the study.
    #[arg(long, global = true)]
    pub panel: bool,
    /// Key-value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] DcsError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 2 for bad input, 3 for estimation that failed to converge, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                DcsError::Input(_) | DcsError::Io(_) | DcsError::Csv(_) | DcsError::Json(_) => 2,
                DcsError::Convergence { .. } => 3,
                DcsError::Numeric(_) => 4,
            },
            CliError::Write { .. } => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const CONFIG_KEYS: &[&str] = &[
    "input", "format", "method", "window", "holding", "alpha", "seed", "grid", "reps", "sparsity", "turnover",
    "policy", "lags", "boots", "write_path", "panel", "out",
];

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", n + 1)))?;
        let key = k.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::usage(format!("config line {}: unknown key '{}'", n + 1, k.trim())));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::usage(format!("invalid value for {key}: '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::usage(format!("invalid value for {key}: '{v}'"))),
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub format: String,
    pub method: String,
    pub window: usize,
    pub holding: usize,
    pub alpha: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub grid: String,
    pub reps: usize,
    pub sparsity: String,
    pub turnover: String,
    pub policy: String,
    pub lags: usize,
    pub boots: usize,
    pub write_path: bool,
    pub panel: bool,
}

impl RunConfig {
    pub fn resolve(command: Command, opts: &Options) -> CliResult<Self> {
        let file = match &opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        let pick = |cli: Option<String>, key: &str, default: &str| -> String {
            cli.or_else(|| file.get(key).cloned()).unwrap_or_else(|| default.to_string())
        };
        let default_method = match command {
            Command::Backtest => "dcc,dcs-tau,dcs-rho,ew",
            Command::Simulate => "dcc,dcc-ls,dcs-rho,dcs-tau",
            _ => "dcs-tau",
        };
        Ok(Self {
            command,
            input: opts.input.clone().or_else(|| file.get("input").map(PathBuf::from)),
            format: pick(opts.format.clone(), "format", "wide"),
            method: pick(opts.method.clone(), "method", default_method),
            window: parse_value("window", &pick(opts.window.map(|v| v.to_string()), "window", "1500"))?,
            holding: parse_value("holding", &pick(opts.holding.map(|v| v.to_string()), "holding", "21"))?,
            alpha: parse_value("alpha", &pick(opts.alpha.map(|v| v.to_string()), "alpha", "0.05"))?,
            seed: parse_value("seed", &pick(opts.seed.map(|v| v.to_string()), "seed", "42"))?,
            out: opts
                .out
                .clone()
                .or_else(|| file.get("out").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out")),
            grid: pick(opts.grid.as_ref().map(|g| g.join(" ")), "grid", "p=10 T=1000 delta=0.01"),
            reps: parse_value("reps", &pick(opts.reps.map(|v| v.to_string()), "reps", "20"))?,
            sparsity: pick(opts.sparsity.clone(), "sparsity", "none"),
            turnover: pick(opts.turnover.clone(), "turnover", "drifted"),
            policy: pick(opts.policy.clone(), "policy", "drop"),
            lags: parse_value("lags", &pick(opts.lags.map(|v| v.to_string()), "lags", "10"))?,
            boots: parse_value("boots", &pick(opts.boots.map(|v| v.to_string()), "boots", "999"))?,
            write_path: opts.write_path || file.get("write_path").map_or(Ok(false), |v| parse_bool("write_path", v))?,
            panel: opts.panel || file.get("panel").map_or(Ok(false), |v| parse_bool("panel", v))?,
        })
    }

    /// Settings that determine the results, as ordered key-value pairs.
    /// The output directory is left out so that runs written to different
    /// places produce identical files.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = vec![("command", self.command.name().to_string())];
        if let Some(i) = &self.input {
            e.push(("input", i.display().to_string()));
        }
        let relevant: &[&str] = match self.command {
            Command::Fit => &["format", "method", "policy", "lags", "seed", "write_path"],
            Command::Simulate => &["method", "grid", "reps", "seed", "panel"],
            Command::Backtest => &[
                "format", "method", "window", "holding", "alpha", "sparsity", "turnover", "policy", "boots", "seed",
            ],
            Command::Risk => &["alpha", "seed"],
            Command::Report => &["format", "policy", "lags", "seed"],
        };
        for &k in relevant {
            let v = match k {
                "format" => self.format.clone(),
                "method" => self.method.clone(),
                "window" => self.window.to_string(),
                "holding" => self.holding.to_string(),
                "alpha" => self.alpha.to_string(),
                "seed" => self.seed.to_string(),
                "grid" => self.grid.clone(),
                "reps" => self.reps.to_string(),
                "sparsity" => self.sparsity.clone(),
                "turnover" => self.turnover.clone(),
                "policy" => self.policy.clone(),
                "lags" => self.lags.to_string(),
                "boots" => self.boots.to_string(),
                "write_path" => self.write_path.to_string(),
                "panel" => self.panel.to_string(),
                _ => unreachable!("unknown config key {k}"),
            };
            e.push((k, v));
        }
        e
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
                .collect(),
        )
    }

    pub fn csv_header(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
    }

    pub fn require_input(&self) -> CliResult<&Path> {
        let path = self
            .input
            .as_deref()
            .ok_or_else(|| CliError::usage(format!("{} needs --input", self.command.name())))?;
        if !path.exists() {
            return Err(CliError::usage(format!("input file not found: {}", path.display())));
        }
        Ok(path)
    }
}

pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let cfg = RunConfig::resolve(cli.command, &cli.options)?;
    std::fs::create_dir_all(&cfg.out).map_err(|source| CliError::Write {
        path: cfg.out.clone(),
        source,
    })?;
    match cfg.command {
        Command::Fit => commands::fit(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Backtest => commands::backtest(&cfg),
        Command::Risk => commands::risk(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let m = parse_config("# comment\nwindow = 500\nmethod=dcs-rho # trailing\n\n").unwrap();
        assert_eq!(m["window"], "500");
        assert_eq!(m["method"], "dcs-rho");
        assert!(parse_config("bogus = 1").is_err());
        assert!(parse_config("window 500").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::usage("x").exit_code(), 2);
        assert_eq!(CliError::Core(DcsError::Input("x".into())).exit_code(), 2);
        let conv = DcsError::Convergence {
            message: "x".into(),
            best: vec![],
        };
        assert_eq!(CliError::Core(conv).exit_code(), 3);
        assert_eq!(CliError::Core(DcsError::Numeric("x".into())).exit_code(), 4);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "window = 300\nholding = 5\n").unwrap();
        let opts = Options {
            window: Some(400),
            config: Some(path),
            ..Options::default()
        };
        let cfg = RunConfig::resolve(Command::Backtest, &opts).unwrap();
        assert_eq!(cfg.window, 400);
        assert_eq!(cfg.holding, 5);
        assert_eq!(cfg.seed, 42);
    }
}
