use log::warn;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn r2_from_sums(sse: f64, sst: f64) -> Result<f64> {
    if sst == 0.0 {
        return Err(Error::UndefinedMetric("sum of squared returns is zero".into()));
    }
    Ok(1.0 - sse / sst)
}

/// `1 − Σ(r − r̂)² / Σ r²` over observed cells; `realized[t][i]` is `None`
/// when missing.
pub fn total_r2(realized: &[Vec<Option<f64>>], fitted: &[Vec<f64>]) -> Result<f64> {
    if realized.len() != fitted.len() {
        return Err(Error::Alignment(format!("{} realized vs {} fitted months", realized.len(), fitted.len())));
    }
    let (mut sse, mut sst) = (0.0, 0.0);
    for (r, f) in realized.iter().zip(fitted) {
        if r.len() != f.len() {
            return Err(Error::dim("total_r2", &[r.len()], &[f.len()]));
        }
        for (r, f) in r.iter().zip(f) {
            if let Some(r) = r {
                sse += (r - f).powi(2);
                sst += r * r;
            }
        }
    }
    r2_from_sums(sse, sst)
}

/// Same formula with `f̂_t` replaced by the mean of `f̂_1..f̂_{t-1}`.
///
/// `betas[t]` is `N × K` and `factors[t]` has length `K`. The first month
/// has no history and is left out of both sums.
pub fn predictive_r2(realized: &[Vec<Option<f64>>], betas: &[Tensor], factors: &[Vec<f64>]) -> Result<f64> {
    if realized.len() != betas.len() || realized.len() != factors.len() {
        return Err(Error::Alignment("realized, betas and factors differ in length".into()));
    }
    if realized.len() < 2 {
        return Err(Error::UndefinedMetric("predictive R² needs at least two months".into()));
    }
    warn_first_month();
    let k = factors[0].len();
    let mut running = vec![0.0; k];
    let (mut sse, mut sst) = (0.0, 0.0);
    for t in 0..realized.len() {
        if factors[t].len() != k || betas[t].shape() != [realized[t].len(), k] {
            return Err(Error::dim("predictive_r2", &[realized[t].len(), k], betas[t].shape()));
        }
        if t > 0 {
            let mu: Vec<f64> = running.iter().map(|s| s / t as f64).collect();
            for (i, r) in realized[t].iter().enumerate() {
                if let Some(r) = r {
                    let pred: f64 = betas[t].row(i).iter().zip(&mu).map(|(b, m)| b * m).sum();
                    sse += (r - pred).powi(2);
                    sst += r * r;
                }
            }
        }
        for (s, f) in running.iter_mut().zip(&factors[t]) {
            *s += f;
        }
    }
    r2_from_sums(sse, sst)
}

fn warn_first_month() {
    warn!("predictive R²: first month has no factor history and is skipped");
}
