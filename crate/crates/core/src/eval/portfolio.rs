use log::warn;

use crate::error::{Error, Result};

/// Equal-weight long-short quantile portfolio settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PortfolioSpec {
    /// Fraction of the scored cross-section held in each leg.
    pub quantile: f64,
    /// Cost per unit of one-way turnover.
    pub cost_rate: f64,
    /// Monthly risk-free rate: empty for zero, one constant, or one value
    /// per month.
    pub risk_free: Vec<f64>,
}

impl Default for PortfolioSpec {
    fn default() -> Self {
        Self {
            quantile: 0.1,
            cost_rate: 0.003,
            risk_free: Vec::new(),
        }
    }
}

impl PortfolioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile <= 0.5) {
            return Err(Error::Config(format!("`quantile` must lie in (0, 0.5], got {}", self.quantile)));
        }
        if !(self.cost_rate.is_finite() && self.cost_rate >= 0.0) {
            return Err(Error::Config(format!("`cost_rate` must be non-negative, got {}", self.cost_rate)));
        }
        if self.risk_free.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("`rf` must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonthReturn {
    pub gross: f64,
    pub net: f64,
    pub turnover: f64,
}

/// One entry per month; `None` where the month was skipped for lack of
/// scored stocks, in which case the previous book is carried over.
#[derive(Clone, Debug, PartialEq)]
pub struct Backtest {
    pub months: Vec<Option<MonthReturn>>,
}

impl Backtest {
    pub fn gross(&self) -> Vec<f64> {
        self.months.iter().flatten().map(|m| m.gross).collect()
    }

    pub fn net(&self) -> Vec<f64> {
        self.months.iter().flatten().map(|m| m.net).collect()
    }
}

/// Each month, buys the top quantile by prediction and shorts the bottom
/// quantile, equally weighted within each leg. Only stocks with both a
/// prediction and a realized return are scored.
///
/// The gross return is `mean(long) − mean(short)`, turnover is
/// `½ Σ|w_t − w_{t-1}|` (2.0 for the first book) and the net return is
/// `gross − cost_rate · turnover`.
pub fn long_short_backtest(
    predictions: &[Vec<Option<f64>>],
    realized: &[Vec<Option<f64>>],
    spec: &PortfolioSpec,
) -> Result<Backtest> {
    spec.validate()?;
    if predictions.len() != realized.len() {
        return Err(Error::Alignment(format!(
            "{} prediction months vs {} realized",
            predictions.len(),
            realized.len()
        )));
    }
    let n = predictions.first().map_or(0, Vec::len);
    let mut held: Option<Vec<f64>> = None;
    let mut months = Vec::with_capacity(predictions.len());
    for (t, (p, r)) in predictions.iter().zip(realized).enumerate() {
        if p.len() != n || r.len() != n {
            return Err(Error::dim("long_short_backtest", &[n], &[p.len().max(r.len())]));
        }
        let mut scored: Vec<(usize, f64, f64)> = (0..n)
            .filter_map(|i| Some((i, p[i]?, r[i]?)))
            .collect();
        let k = (spec.quantile * scored.len() as f64).floor() as usize;
        if k < 1 || 2 * k > scored.len() {
            warn!("month {t}: {} scored stocks is too few for a long-short book", scored.len());
            months.push(None);
            continue;
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let long = &scored[..k];
        let short = &scored[scored.len() - k..];
        let mean = |leg: &[(usize, f64, f64)]| leg.iter().map(|s| s.2).sum::<f64>() / k as f64;
        let gross = mean(long) - mean(short);
        let mut w = vec![0.0; n];
        for s in long {
            w[s.0] = 1.0 / k as f64;
        }
        for s in short {
            w[s.0] = -1.0 / k as f64;
        }
        let turnover = match &held {
            None => 2.0,
            Some(prev) => 0.5 * w.iter().zip(prev).map(|(a, b)| (a - b).abs()).sum::<f64>(),
        };
        held = Some(w);
        months.push(Some(MonthReturn {
            gross,
            net: gross - spec.cost_rate * turnover,
            turnover,
        }));
    }
    Ok(Backtest { months })
}
