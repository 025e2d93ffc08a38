//! Dynamic Conditional SKEPTIC: DCC-style correlation dynamics driven by
//! nonparanormal normal scores, with rank-based (Kendall / Spearman)
//! correlation targeting.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`ingest`]: price panels and demeaned log returns
//! - [`garch`]: univariate GARCH(1,1) / GJR-GARCH(1,1) quasi-likelihood fits
//! - [`ranks`]: ECDF normal scores, Kendall's tau, Spearman's rho, the sine
//!   bridge and nearest-correlation repair
//! - [`dcs`]: the correlation recursion, composite likelihood and model fit
//! - [`simulate`]: the contaminated Student-t data-generating process and the
//!   Monte Carlo parameter-recovery study
//! - [`portfolio`]: GMV weights, sparse precision, StARS and the rolling backtest
//! - [`risk`]: normal VaR/ES and the UC / CC / DQ violation backtests
//! - [`diagnostics`]: Portmanteau, Jarque-Bera, Kolmogorov-Smirnov and the
//!   pairwise portfolio comparison tests

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dcs;
pub mod diagnostics;
pub mod error;
pub mod garch;
pub mod ingest;
pub mod linalg;
pub mod optim;
pub mod portfolio;
pub mod ranks;
pub mod risk;
pub mod rng;
pub mod simulate;

pub use dcs::{fit_dcs, DcsModel, DcsParams, Estimator};
pub use error::{DcsError, Result};
pub use garch::{fit_garch11, GarchFit, GarchParams};
pub use ingest::{PricePanel, ReturnPanel};
pub use ranks::{CorrMatrix, CorrMethod, ScorePanel};
