use std::io::Write;
use std::ops::Range;

use log::warn;

use super::ic::{rank_ic_observed, rank_icir};
use super::portfolio::{long_short_backtest, MonthReturn, PortfolioSpec};
use super::r2::{predictive_r2, total_r2};
use super::sharpe::sharpe;
use crate::data::{forecast_window, window_ending, PanelDataset, YearMonth};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{fit_window, predict, RvraeModel};
use crate::numerics::Tensor;

/// Which stocks the model may see and which are scored for rank IC.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub portfolio: PortfolioSpec,
    /// Stocks whose returns are withheld from the model's inputs. They are
    /// still priced through their characteristics and still scored.
    pub hidden: Vec<usize>,
    /// Restricts rank IC to these stocks; all stocks when `None`.
    pub ic_universe: Option<Vec<usize>>,
}

/// Model outputs for one test month.
#[derive(Clone, Debug, PartialEq)]
pub struct MonthDetail {
    pub date: YearMonth,
    pub realized: Vec<Option<f64>>,
    /// `β̂_t f̂_t` from the window ending at this month.
    pub fitted: Vec<f64>,
    pub fitted_factors: Vec<f64>,
    pub fitted_betas: Tensor,
    /// Forecast from the window ending the month before.
    pub forecast: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonthRow {
    pub date: YearMonth,
    pub portfolio: Option<MonthReturn>,
    /// Rank IC of the fitted cross-section.
    pub rank_ic: Option<f64>,
    /// Rank IC of the one-month-ahead forecast.
    pub forecast_ic: Option<f64>,
}

/// Summary metrics plus one row per test month. Metrics that are undefined
/// on the given data (e.g. a zero-variance spread series) are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub total_r2: f64,
    pub pred_r2: Option<f64>,
    pub sharpe_gross: Option<f64>,
    pub sharpe_net: Option<f64>,
    pub sharpe_gross_annual: Option<f64>,
    pub sharpe_net_annual: Option<f64>,
    pub rank_ic_mean: Option<f64>,
    pub rank_icir: Option<f64>,
    pub forecast_ic_mean: Option<f64>,
    pub forecast_icir: Option<f64>,
    pub months: Vec<MonthRow>,
    pub details: Vec<MonthDetail>,
}

fn defined(r: Result<f64>, what: &str) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(m)) => {
            warn!("{what}: {m}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs the model over every month of `test` on `panel`, using earlier
/// months of the panel as history.
pub fn evaluate(
    model: &RvraeModel,
    panel: &PanelDataset,
    test: Range<usize>,
    options: &EvalOptions,
    exec: Exec,
) -> Result<EvalReport> {
    options.portfolio.validate()?;
    let t_len = model.dims.window;
    if test.is_empty() {
        return Err(Error::Config("test range is empty".into()));
    }
    if test.end > panel.n_dates() {
        return Err(Error::Alignment(format!("test range {test:?} exceeds the panel")));
    }
    if test.start < t_len {
        return Err(Error::Alignment(format!(
            "test starts at month {} but a forecast needs {t_len} prior months",
            test.start
        )));
    }
    if panel.n_stocks() != model.dims.n_stocks || panel.n_chars() != model.dims.n_chars {
        return Err(Error::dim(
            "evaluate",
            &[model.dims.n_stocks, model.dims.n_chars],
            &[panel.n_stocks(), panel.n_chars()],
        ));
    }
    let mut input = panel.clone();
    input.mask_returns(&options.hidden);

    let details = exec.map_range(test.clone(), |t| -> Result<MonthDetail> {
        let fit = fit_window(model, &window_ending(&input, t, t_len)?)?;
        let fc = predict(model, &forecast_window(&input, t, t_len)?)?;
        Ok(MonthDetail {
            date: panel.dates()[t],
            realized: panel.returns_at(t),
            fitted: fit.returns.into_data(),
            fitted_factors: fit.factors.into_data(),
            fitted_betas: fit.betas,
            forecast: fc.expected_returns.into_data(),
        })
    });
    let details = details.into_iter().collect::<Result<Vec<_>>>()?;

    let realized: Vec<Vec<Option<f64>>> = details.iter().map(|d| d.realized.clone()).collect();
    let fitted: Vec<Vec<f64>> = details.iter().map(|d| d.fitted.clone()).collect();
    let total = total_r2(&realized, &fitted)?;
    let betas: Vec<Tensor> = details.iter().map(|d| d.fitted_betas.clone()).collect();
    let factors: Vec<Vec<f64>> = details.iter().map(|d| d.fitted_factors.clone()).collect();
    let pred_r2 = defined(predictive_r2(&realized, &betas, &factors), "predictive R²")?;

    let universe = options.ic_universe.as_deref();
    let ic = |pred: &[f64], real: &[Option<f64>]| defined(rank_ic_observed(pred, real, universe), "rank IC");
    let mut fitted_ics = Vec::with_capacity(details.len());
    let mut forecast_ics = Vec::with_capacity(details.len());
    for d in &details {
        fitted_ics.push(ic(&d.fitted, &d.realized)?);
        forecast_ics.push(ic(&d.forecast, &d.realized)?);
    }

    let forecasts: Vec<Vec<Option<f64>>> = details
        .iter()
        .map(|d| d.forecast.iter().copied().map(Some).collect())
        .collect();
    let bt = long_short_backtest(&forecasts, &realized, &options.portfolio)?;
    let rf = if options.portfolio.risk_free.len() > 1 {
        bt.months
            .iter()
            .zip(&options.portfolio.risk_free)
            .filter_map(|(m, r)| m.map(|_| *r))
            .collect()
    } else {
        options.portfolio.risk_free.clone()
    };
    let (gross, net) = (bt.gross(), bt.net());
    let s = |series: &[f64], annual: bool| defined(sharpe(series, &rf, annual), "Sharpe ratio");

    let fitted_some: Vec<f64> = fitted_ics.iter().flatten().copied().collect();
    let forecast_some: Vec<f64> = forecast_ics.iter().flatten().copied().collect();
    Ok(EvalReport {
        total_r2: total,
        pred_r2,
        sharpe_gross: s(&gross, false)?,
        sharpe_net: s(&net, false)?,
        sharpe_gross_annual: s(&gross, true)?,
        sharpe_net_annual: s(&net, true)?,
        rank_ic_mean: mean(&fitted_some),
        rank_icir: defined(rank_icir(&fitted_some), "rank ICIR")?,
        forecast_ic_mean: mean(&forecast_some),
        forecast_icir: defined(rank_icir(&forecast_some), "forecast ICIR")?,
        months: details
            .iter()
            .enumerate()
            .map(|(j, d)| MonthRow {
                date: d.date,
                portfolio: bt.months[j],
                rank_ic: fitted_ics[j],
                forecast_ic: forecast_ics[j],
            })
            .collect(),
        details,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// One header row and one summary row. R² values are also given in percent.
pub fn write_report_csv<W: Write>(report: &EvalReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "total_r2",
        "total_r2_pct",
        "pred_r2",
        "pred_r2_pct",
        "sharpe_gross",
        "sharpe_net",
        "sharpe_gross_annual",
        "sharpe_net_annual",
        "rank_ic_mean",
        "rank_icir",
        "forecast_ic_mean",
        "forecast_icir",
        "months",
    ])?;
    w.write_record([
        report.total_r2.to_string(),
        (100.0 * report.total_r2).to_string(),
        cell(report.pred_r2),
        cell(report.pred_r2.map(|v| 100.0 * v)),
        cell(report.sharpe_gross),
        cell(report.sharpe_net),
        cell(report.sharpe_gross_annual),
        cell(report.sharpe_net_annual),
        cell(report.rank_ic_mean),
        cell(report.rank_icir),
        cell(report.forecast_ic_mean),
        cell(report.forecast_icir),
        report.months.len().to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// `date,spread_gross,spread_net,turnover,rank_ic,forecast_ic`.
pub fn write_months_csv<W: Write>(report: &EvalReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "spread_gross", "spread_net", "turnover", "rank_ic", "forecast_ic"])?;
    for m in &report.months {
        w.write_record([
            m.date.to_string(),
            cell(m.portfolio.map(|p| p.gross)),
            cell(m.portfolio.map(|p| p.net)),
            cell(m.portfolio.map(|p| p.turnover)),
            cell(m.rank_ic),
            cell(m.forecast_ic),
        ])?;
    }
    w.flush()?;
    Ok(())
}
