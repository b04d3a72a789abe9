use std::io::Write;

use super::report::{evaluate, EvalOptions};
use crate::data::{omit_stocks, windows_in, PanelDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{train, Dims, RvraeModel, TrainConfig};

/// Rank IC on the omitted stocks for one `(m, seed)` run.
#[derive(Clone, Debug, PartialEq)]
pub struct OmissionRun {
    pub m: usize,
    pub seed: u64,
    pub omitted: Vec<String>,
    pub rank_ic: Option<f64>,
    pub rank_icir: Option<f64>,
}

/// Mean and sample standard deviation across seeds for one `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct OmissionSummary {
    pub m: usize,
    pub runs: usize,
    pub rank_ic: (f64, f64),
    pub rank_icir: (f64, f64),
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        f64::NAN
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, sd)
}

/// Trains with `m` stocks hidden from the training and validation months,
/// then scores rank IC on those stocks over the test months. Their test
/// returns are withheld from the model, so their predictions come from
/// characteristics alone.
#[allow(clippy::too_many_arguments)]
pub fn omission_run(
    panel: &PanelDataset,
    split: &SplitSpec,
    dims: Dims,
    config: &TrainConfig,
    options: &EvalOptions,
    m: usize,
    seed: u64,
    exec: Exec,
) -> Result<OmissionRun> {
    split.validate(panel.n_dates())?;
    let fit_span = panel.slice(0..split.test.start)?;
    let (reduced, omitted) = omit_stocks(&fit_span, m, seed)?;
    let idx: Vec<usize> = omitted
        .iter()
        .map(|t| panel.ticker_index(t).expect("ticker from this panel"))
        .collect();
    let train_w = windows_in(&reduced, split.train.clone(), dims.window)?;
    let val_w = windows_in(&reduced, split.validation.clone(), dims.window)?;
    let model = RvraeModel::new(dims, seed)?;
    let cfg = TrainConfig { seed, ..*config };
    let trained = train(model, &train_w, &val_w, &cfg, exec)?.model;
    let opts = EvalOptions {
        hidden: idx.clone(),
        ic_universe: (m > 0).then_some(idx),
        ..options.clone()
    };
    let report = evaluate(&trained, panel, split.test.clone(), &opts, exec)?;
    Ok(OmissionRun {
        m,
        seed,
        omitted,
        rank_ic: report.rank_ic_mean,
        rank_icir: report.rank_icir,
    })
}

/// Every `(m, seed)` combination, run in parallel and returned in input
/// order.
#[allow(clippy::too_many_arguments)]
pub fn omission_protocol(
    panel: &PanelDataset,
    split: &SplitSpec,
    dims: Dims,
    config: &TrainConfig,
    options: &EvalOptions,
    ms: &[usize],
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<OmissionRun>> {
    if ms.is_empty() || seeds.is_empty() {
        return Err(Error::Config("omission protocol needs at least one m and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = ms.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    exec.map(&jobs, |&(m, s)| omission_run(panel, split, dims, config, options, m, s, Exec::Sequential))
        .into_iter()
        .collect()
}

/// One summary per distinct `m`, in first-seen order.
pub fn summarize_omission(runs: &[OmissionRun]) -> Vec<OmissionSummary> {
    let mut ms: Vec<usize> = Vec::new();
    for r in runs {
        if !ms.contains(&r.m) {
            ms.push(r.m);
        }
    }
    ms.into_iter()
        .map(|m| {
            let sel: Vec<&OmissionRun> = runs.iter().filter(|r| r.m == m).collect();
            let ic: Vec<f64> = sel.iter().filter_map(|r| r.rank_ic).collect();
            let icir: Vec<f64> = sel.iter().filter_map(|r| r.rank_icir).collect();
            OmissionSummary {
                m,
                runs: sel.len(),
                rank_ic: mean_sd(&ic),
                rank_icir: mean_sd(&icir),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// `m,seed,rank_ic,rank_icir`.
pub fn write_omission_runs_csv<W: Write>(runs: &[OmissionRun], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["m", "seed", "rank_ic", "rank_icir"])?;
    for r in runs {
        w.write_record([r.m.to_string(), r.seed.to_string(), opt(r.rank_ic), opt(r.rank_icir)])?;
    }
    w.flush()?;
    Ok(())
}

/// Formats a cell as `mean(sd)` with four decimals.
pub fn mean_sd_cell((mean, sd): (f64, f64)) -> String {
    format!("{mean:.4}({sd:.4})")
}

/// `metric,m=…` rows for rank IC and ICIR, one column per omitted count.
pub fn write_omission_summary_csv<W: Write>(summary: &[OmissionSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["metric".to_string()];
    header.extend(summary.iter().map(|s| format!("m={}", s.m)));
    w.write_record(&header)?;
    let mut ic = vec!["Rank IC".to_string()];
    ic.extend(summary.iter().map(|s| mean_sd_cell(s.rank_ic)));
    w.write_record(&ic)?;
    let mut icir = vec!["Rank ICIR".to_string()];
    icir.extend(summary.iter().map(|s| mean_sd_cell(s.rank_icir)));
    w.write_record(&icir)?;
    w.flush()?;
    Ok(())
}
