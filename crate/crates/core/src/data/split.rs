use std::ops::Range;

use super::panel::PanelDataset;
use crate::error::{Error, Result};

/// Contiguous chronological date ranges, `train < validation < test`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    /// Cuts `n_dates` in the given proportions, rounding each cut point.
    pub fn proportional(n_dates: usize, train: f64, validation: f64, test: f64) -> Result<Self> {
        let parts = [train, validation, test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Config(format!(
                "split proportions must be positive, got {train}/{validation}/{test}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        let cut1 = (n_dates as f64 * train / sum).round() as usize;
        let cut2 = (n_dates as f64 * (train + validation) / sum).round() as usize;
        let spec = Self {
            train: 0..cut1,
            validation: cut1..cut2,
            test: cut2..n_dates,
        };
        spec.validate(n_dates)?;
        Ok(spec)
    }

    pub fn validate(&self, n_dates: usize) -> Result<()> {
        for (name, r) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            if r.start >= r.end {
                return Err(Error::Config(format!("{name} range {r:?} is empty")));
            }
        }
        if self.train.end > self.validation.start || self.validation.end > self.test.start {
            return Err(Error::Config("split ranges overlap or are out of order".into()));
        }
        if self.train.end != self.validation.start || self.validation.end != self.test.start {
            return Err(Error::Config("split ranges must be contiguous".into()));
        }
        if self.test.end > n_dates {
            return Err(Error::Config(format!("test range ends past the {n_dates}-date panel")));
        }
        Ok(())
    }
}

/// Chronological train, validation and test sub-panels.
pub fn split(panel: &PanelDataset, spec: &SplitSpec) -> Result<(PanelDataset, PanelDataset, PanelDataset)> {
    spec.validate(panel.n_dates())?;
    Ok((
        panel.slice(spec.train.clone())?,
        panel.slice(spec.validation.clone())?,
        panel.slice(spec.test.clone())?,
    ))
}
