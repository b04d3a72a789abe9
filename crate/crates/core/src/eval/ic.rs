use crate::error::{Error, Result};

/// Zero-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation between a predicted and a realized cross-section.
pub fn rank_ic(predicted: &[f64], realized: &[f64]) -> Result<f64> {
    if predicted.len() != realized.len() {
        return Err(Error::dim("rank_ic", &[predicted.len()], &[realized.len()]));
    }
    if predicted.len() < 3 {
        return Err(Error::UndefinedMetric(format!("rank IC needs 3 stocks, got {}", predicted.len())));
    }
    pearson(&average_ranks(predicted), &average_ranks(realized))
        .ok_or_else(|| Error::UndefinedMetric("rank IC of an all-tied cross-section".into()))
}

/// [`rank_ic`] over the stocks with a realized value, optionally restricted
/// to `universe`.
pub fn rank_ic_observed(predicted: &[f64], realized: &[Option<f64>], universe: Option<&[usize]>) -> Result<f64> {
    let all: Vec<usize>;
    let idx = match universe {
        Some(u) => u,
        None => {
            all = (0..predicted.len()).collect();
            &all
        }
    };
    let (p, r): (Vec<f64>, Vec<f64>) = idx
        .iter()
        .filter_map(|&i| realized.get(i).copied().flatten().map(|r| (predicted[i], r)))
        .unzip();
    rank_ic(&p, &r)
}

/// Mean over sample standard deviation of monthly ICs.
pub fn rank_icir(ics: &[f64]) -> Result<f64> {
    if ics.len() < 2 {
        return Err(Error::UndefinedMetric("rank ICIR needs two months".into()));
    }
    let n = ics.len() as f64;
    let mean = ics.iter().sum::<f64>() / n;
    let sd = (ics.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd.is_nan() || sd <= 0.0 || ics.iter().all(|v| *v == ics[0]) {
        return Err(Error::UndefinedMetric("monthly ICs have zero dispersion".into()));
    }
    Ok(mean / sd)
}
