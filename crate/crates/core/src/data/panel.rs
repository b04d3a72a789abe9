use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Calendar month, written `YYYY-MM`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Domain(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u8 {
        self.month
    }

    pub fn next(self) -> Self {
        self.add_months(1)
    }

    pub fn prev(self) -> Self {
        self.add_months(-1)
    }

    pub fn add_months(self, delta: i64) -> Self {
        let idx = i64::from(self.year) * 12 + i64::from(self.month) - 1 + delta;
        Self {
            year: idx.div_euclid(12) as i32,
            month: (idx.rem_euclid(12) + 1) as u8,
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("expected YYYY-MM, got `{s}`"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        Self::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

/// Aligned monthly panel of returns and characteristics.
///
/// Characteristics at date index `t` are the values known before the return
/// at `t`, i.e. observed at the previous month end. Every cell carries an
/// observed flag; unobserved cells hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    dates: Vec<YearMonth>,
    tickers: Vec<String>,
    n_chars: usize,
    returns: Vec<f64>,
    return_mask: Vec<bool>,
    characteristics: Vec<f64>,
    char_mask: Vec<bool>,
}

impl PanelDataset {
    /// Empty panel with every cell missing.
    pub fn new(dates: Vec<YearMonth>, tickers: Vec<String>, n_chars: usize) -> Result<Self> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Integrity("dates must be strictly increasing".into()));
        }
        let mut sorted = tickers.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Integrity("duplicate ticker".into()));
        }
        let cells = dates.len() * tickers.len();
        Ok(Self {
            returns: vec![0.0; cells],
            return_mask: vec![false; cells],
            characteristics: vec![0.0; cells * n_chars],
            char_mask: vec![false; cells * n_chars],
            dates,
            tickers,
            n_chars,
        })
    }

    pub fn dates(&self) -> &[YearMonth] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_chars(&self) -> usize {
        self.n_chars
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    fn cell(&self, t: usize, i: usize) -> usize {
        t * self.tickers.len() + i
    }

    pub fn ret(&self, t: usize, i: usize) -> Option<f64> {
        let c = self.cell(t, i);
        self.return_mask[c].then(|| self.returns[c])
    }

    pub fn set_return(&mut self, t: usize, i: usize, value: Option<f64>) -> Result<()> {
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite return {v}")));
            }
        }
        let c = self.cell(t, i);
        self.returns[c] = value.unwrap_or(0.0);
        self.return_mask[c] = value.is_some();
        Ok(())
    }

    pub fn characteristic(&self, t: usize, i: usize, k: usize) -> Option<f64> {
        let c = self.cell(t, i) * self.n_chars + k;
        self.char_mask[c].then(|| self.characteristics[c])
    }

    pub fn set_characteristic(&mut self, t: usize, i: usize, k: usize, value: Option<f64>) -> Result<()> {
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(Error::Domain(format!("non-finite characteristic {v}")));
            }
        }
        let c = self.cell(t, i) * self.n_chars + k;
        self.characteristics[c] = value.unwrap_or(0.0);
        self.char_mask[c] = value.is_some();
        Ok(())
    }

    pub fn has_any_characteristic(&self, t: usize, i: usize) -> bool {
        let c = self.cell(t, i) * self.n_chars;
        self.char_mask[c..c + self.n_chars].iter().any(|m| *m)
    }

    /// Realized cross-section at `t` with `None` for missing returns.
    pub fn returns_at(&self, t: usize) -> Vec<Option<f64>> {
        (0..self.n_stocks()).map(|i| self.ret(t, i)).collect()
    }

    pub fn observed_returns(&self) -> usize {
        self.return_mask.iter().filter(|m| **m).count()
    }

    /// Sub-panel of the given date range.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_dates() {
            return Err(Error::Alignment(format!(
                "slice {range:?} of a {}-date panel",
                self.n_dates()
            )));
        }
        let (n, c) = (self.n_stocks(), self.n_chars);
        let cells = range.start * n..range.end * n;
        Ok(Self {
            dates: self.dates[range.clone()].to_vec(),
            tickers: self.tickers.clone(),
            n_chars: c,
            returns: self.returns[cells.clone()].to_vec(),
            return_mask: self.return_mask[cells.clone()].to_vec(),
            characteristics: self.characteristics[cells.start * c..cells.end * c].to_vec(),
            char_mask: self.char_mask[cells.start * c..cells.end * c].to_vec(),
        })
    }

    /// Marks every return of the given stocks as missing.
    pub fn mask_returns(&mut self, stocks: &[usize]) {
        for t in 0..self.n_dates() {
            for &i in stocks {
                let c = self.cell(t, i);
                self.returns[c] = 0.0;
                self.return_mask[c] = false;
            }
        }
    }

    /// Marks every characteristic of the given stocks as missing.
    pub fn mask_characteristics(&mut self, stocks: &[usize]) {
        for t in 0..self.n_dates() {
            for &i in stocks {
                let c = self.cell(t, i) * self.n_chars;
                self.characteristics[c..c + self.n_chars].iter_mut().for_each(|v| *v = 0.0);
                self.char_mask[c..c + self.n_chars].iter_mut().for_each(|m| *m = false);
            }
        }
    }
}
