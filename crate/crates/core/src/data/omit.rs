use super::panel::PanelDataset;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Hides `m` randomly chosen stocks from a training panel.
///
/// Their returns and characteristics are masked rather than removed, so
/// the cross-section keeps its width. Returns the reduced panel and the
/// omitted tickers in panel order.
pub fn omit_stocks(panel: &PanelDataset, m: usize, seed: u64) -> Result<(PanelDataset, Vec<String>)> {
    let n = panel.n_stocks();
    if m >= n {
        return Err(Error::Config(format!("cannot omit {m} of {n} stocks")));
    }
    let mut rng = Rng::derived(seed, "omit");
    let mut idx = rng.sample_indices(n, m);
    idx.sort_unstable();
    let mut out = panel.clone();
    out.mask_returns(&idx);
    out.mask_characteristics(&idx);
    let tickers = idx.iter().map(|i| panel.tickers()[*i].clone()).collect();
    Ok((out, tickers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use std::collections::BTreeSet;

    fn panel() -> PanelDataset {
        let spec = SyntheticSpec {
            n_stocks: 80,
            t_total: 6,
            ..Default::default()
        };
        generate_synthetic(&spec).unwrap().0
    }

    #[test]
    fn zero_is_identity() {
        let p = panel();
        let (q, omitted) = omit_stocks(&p, 0, 1).unwrap();
        assert_eq!(p, q);
        assert!(omitted.is_empty());
    }

    #[test]
    fn deterministic_partition() {
        let p = panel();
        let (q, a) = omit_stocks(&p, 50, 7).unwrap();
        let (_, b) = omit_stocks(&p, 50, 7).unwrap();
        assert_eq!(a, b);
        let set: BTreeSet<&String> = a.iter().collect();
        assert_eq!(set.len(), 50);
        for (i, t) in p.tickers().iter().enumerate() {
            let hidden = set.contains(t);
            assert_eq!(q.ret(2, i).is_none(), hidden);
            assert_eq!(!q.has_any_characteristic(2, i), hidden);
        }
        assert!(omit_stocks(&p, 80, 7).is_err());
    }
}
