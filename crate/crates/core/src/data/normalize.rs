use super::panel::PanelDataset;
use crate::error::Result;
use crate::eval::average_ranks;

/// Per date and per characteristic, maps the observed cross-section to
/// ranks scaled into `[-1, 1]` (ties share their average rank). Missing
/// entries become 0, the cross-sectional median.
pub fn normalize_characteristics(panel: &PanelDataset) -> Result<PanelDataset> {
    let mut out = panel.clone();
    let n = panel.n_stocks();
    for t in 0..panel.n_dates() {
        for k in 0..panel.n_chars() {
            let observed: Vec<(usize, f64)> = (0..n)
                .filter_map(|i| panel.characteristic(t, i, k).map(|v| (i, v)))
                .collect();
            if observed.is_empty() {
                continue;
            }
            for i in 0..n {
                out.set_characteristic(t, i, k, Some(0.0))?;
            }
            let values: Vec<f64> = observed.iter().map(|(_, v)| *v).collect();
            let ranks = average_ranks(&values);
            let denom = (values.len() - 1) as f64;
            for ((i, _), r) in observed.iter().zip(ranks) {
                let scaled = if denom == 0.0 { 0.0 } else { 2.0 * r / denom - 1.0 };
                out.set_characteristic(t, *i, k, Some(scaled))?;
            }
        }
    }
    Ok(out)
}
