use std::ops::Range;

use super::panel::PanelDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Model input for `T` consecutive months.
///
/// Slot `s` holds the cross-sectional returns of one month and the
/// characteristics known before that month's return. Missing returns are
/// stored as 0 with mask 0; missing characteristics are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub returns: Vec<Vec<f64>>,
    pub mask: Vec<Vec<f64>>,
    pub characteristics: Vec<Tensor>,
    /// Panel index of the last return slot.
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn n_stocks(&self) -> usize {
        self.returns.first().map_or(0, Vec::len)
    }
}

fn returns_slot(panel: &PanelDataset, t: usize) -> (Vec<f64>, Vec<f64>) {
    (0..panel.n_stocks())
        .map(|i| match panel.ret(t, i) {
            Some(r) => (r, 1.0),
            None => (0.0, 0.0),
        })
        .unzip()
}

fn chars_slot(panel: &PanelDataset, t: usize) -> Tensor {
    let (n, c) = (panel.n_stocks(), panel.n_chars());
    let mut data = Vec::with_capacity(n * c);
    for i in 0..n {
        for k in 0..c {
            data.push(panel.characteristic(t, i, k).unwrap_or(0.0));
        }
    }
    Tensor::new(vec![n, c], data).expect("panel values are finite")
}

/// Training/fitting window whose last return slot is `end`.
pub fn window_ending(panel: &PanelDataset, end: usize, len: usize) -> Result<Window> {
    if len == 0 || end + 1 < len || end >= panel.n_dates() {
        return Err(Error::Alignment(format!(
            "window of length {len} ending at {end} does not fit {} dates",
            panel.n_dates()
        )));
    }
    let start = end + 1 - len;
    let (returns, mask) = (start..=end).map(|t| returns_slot(panel, t)).unzip();
    let characteristics = (start..=end).map(|t| chars_slot(panel, t)).collect();
    Ok(Window { returns, mask, characteristics, end })
}

/// Input for forecasting month `target`: returns from the `len` months
/// before it, and characteristics shifted one slot later so the newest
/// slot carries the characteristics known before `target`'s return.
pub fn forecast_window(panel: &PanelDataset, target: usize, len: usize) -> Result<Window> {
    if len == 0 || target < len || target >= panel.n_dates() {
        return Err(Error::Alignment(format!(
            "forecast of date {target} needs {len} prior months within {} dates",
            panel.n_dates()
        )));
    }
    let start = target - len;
    let (returns, mask) = (start..target).map(|t| returns_slot(panel, t)).unzip();
    let characteristics = (start + 1..=target).map(|t| chars_slot(panel, t)).collect();
    Ok(Window { returns, mask, characteristics, end: target - 1 })
}

/// Every stride-1 window whose last return slot lies in `range`. Earlier
/// slots may reach back before `range.start`, but not before the panel.
pub fn windows_in(panel: &PanelDataset, range: Range<usize>, len: usize) -> Result<Vec<Window>> {
    if range.end > panel.n_dates() {
        return Err(Error::Alignment(format!("range {range:?} exceeds panel")));
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    (range.start.max(len - 1)..range.end)
        .map(|end| window_ending(panel, end, len))
        .collect()
}
