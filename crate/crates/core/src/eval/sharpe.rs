use crate::error::{Error, Result};

/// Mean excess return over its sample standard deviation, times `√12` when
/// `annualize` is set. `risk_free` is empty (zero), one constant, or one
/// value per observation.
pub fn sharpe(series: &[f64], risk_free: &[f64], annualize: bool) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::UndefinedMetric("Sharpe ratio needs two observations".into()));
    }
    let excess: Vec<f64> = match risk_free.len() {
        0 => series.to_vec(),
        1 => series.iter().map(|r| r - risk_free[0]).collect(),
        n if n == series.len() => series.iter().zip(risk_free).map(|(r, f)| r - f).collect(),
        n => return Err(Error::dim("sharpe", &[series.len()], &[n])),
    };
    let n = excess.len() as f64;
    let mean = excess.iter().sum::<f64>() / n;
    let sd = (excess.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd.is_nan() || sd <= 0.0 || excess.iter().all(|v| *v == excess[0]) {
        return Err(Error::UndefinedMetric("excess returns have zero standard deviation".into()));
    }
    let s = mean / sd;
    Ok(if annualize { s * 12f64.sqrt() } else { s })
}
