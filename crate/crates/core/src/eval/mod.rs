//! Fit and trading metrics: total and predictive R², long-short decile
//! backtests with Sharpe ratios, rank IC / ICIR, and the stock-omission
//! robustness protocol.

mod ic;
mod portfolio;
mod r2;
mod report;
mod robustness;
mod sharpe;

pub use ic::{average_ranks, rank_ic, rank_ic_observed, rank_icir};
pub use portfolio::{long_short_backtest, Backtest, MonthReturn, PortfolioSpec};
pub use r2::{predictive_r2, total_r2};
pub use report::{evaluate, write_months_csv, write_report_csv, EvalOptions, EvalReport, MonthDetail, MonthRow};
pub use robustness::{
    mean_sd_cell, omission_protocol, omission_run, summarize_omission, write_omission_runs_csv,
    write_omission_summary_csv, OmissionRun, OmissionSummary,
};
pub use sharpe::sharpe;
