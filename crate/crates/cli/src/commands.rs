use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use log::info;
use rvrae::data::{
    forecast_window, generate_synthetic, load_csv, normalize_characteristics, window_ending, windows_in, write_betas_csv,
    write_csv, write_factors_csv, PanelDataset, SplitSpec, SyntheticSpec,
};
use rvrae::eval::{
    evaluate, omission_protocol, summarize_omission, write_months_csv, write_omission_runs_csv,
    write_omission_summary_csv, write_report_csv, EvalOptions,
};
use rvrae::model::{loss_gradcheck, predict, train, Dims, RvraeModel};
use rvrae::numerics::OpKind;
use rvrae::{Error, Exec};
use thiserror::Error as ThisError;

use crate::config::{sibling, ConfigError, RunConfig};

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("invalid configuration {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Check(String),
    #[error("incompatible input: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 1 for a failed check or run, 2 for bad configuration or input, 3 for
    /// a checkpoint that does not fit the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Incompatible(_) => 3,
            CliError::Core(e) => match e {
                Error::Diverged { .. } | Error::NumericFault { .. } => 1,
                Error::Dimension { .. } => 3,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn exec(cfg: &RunConfig) -> Exec {
    if cfg.parallel {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

fn require_file(key: &str, path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ConfigError {
            key: key.into(),
            message: format!("no such file {}", path.display()),
        }
        .into())
    }
}

fn prepare_output(key: &str, path: &Path) -> CliResult<()> {
    let bad = |message: String| ConfigError { key: key.into(), message };
    if path.is_dir() {
        return Err(bad(format!("{} is a directory", path.display())).into());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| bad(format!("{}: {e}", parent.display())))?;
    }
    Ok(())
}

fn load_panel(cfg: &RunConfig) -> CliResult<PanelDataset> {
    let panel = load_csv(&cfg.data)?;
    Ok(if cfg.normalize {
        normalize_characteristics(&panel)?
    } else {
        panel
    })
}

fn load_model(path: &Path) -> CliResult<RvraeModel> {
    Ok(RvraeModel::from_checkpoint(&fs::read_to_string(path).map_err(Error::from)?)?)
}

fn check_compatible(model: &RvraeModel, panel: &PanelDataset) -> CliResult<()> {
    let d = model.dims;
    if d.n_stocks != panel.n_stocks() || d.n_chars != panel.n_chars() {
        return Err(CliError::Incompatible(format!(
            "checkpoint expects {} stocks and {} characteristics, the panel has {} and {}",
            d.n_stocks,
            d.n_chars,
            panel.n_stocks(),
            panel.n_chars()
        )));
    }
    Ok(())
}

fn split_for(cfg: &RunConfig, panel: &PanelDataset) -> CliResult<SplitSpec> {
    Ok(SplitSpec::proportional(
        panel.n_dates(),
        cfg.split_train,
        cfg.split_val,
        cfg.split_test,
    )?)
}

fn model_dims(cfg: &RunConfig, panel: &PanelDataset) -> Dims {
    Dims {
        n_stocks: panel.n_stocks(),
        n_factors: cfg.n_factors,
        hidden: cfg.hidden,
        n_chars: panel.n_chars(),
        beta_hidden: if cfg.beta_hidden == 0 { cfg.n_factors } else { cfg.beta_hidden },
        window: cfg.window,
    }
}

fn write_checkpoint(model: &RvraeModel, path: &Path) -> CliResult<()> {
    fs::write(path, model.to_checkpoint()).map_err(Error::from)?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

/// Writes a synthetic panel to `data` and its hidden factors and betas
/// next to it.
pub fn cmd_gen(cfg: &RunConfig) -> CliResult<String> {
    let spec: SyntheticSpec = cfg.synthetic_spec();
    spec.validate()?;
    prepare_output("data", &cfg.data)?;
    let (panel, truth) = generate_synthetic(&spec)?;
    write_csv(&panel, &cfg.data)?;
    write_factors_csv(&sibling(&cfg.data, "factors"), panel.dates(), &truth.factors)?;
    write_betas_csv(&sibling(&cfg.data, "betas"), panel.dates(), panel.tickers(), &truth.betas)?;
    Ok(format!(
        "wrote {} months x {} stocks to {}",
        panel.n_dates(),
        panel.n_stocks(),
        cfg.data.display()
    ))
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<String> {
    require_file("data", &cfg.data)?;
    if cfg.resume {
        require_file("checkpoint", &cfg.checkpoint)?;
    }
    prepare_output("checkpoint", &cfg.checkpoint)?;
    prepare_output("history", &cfg.history)?;
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let panel = load_panel(cfg)?;
    let split = split_for(cfg, &panel)?;
    let model = if cfg.resume {
        let m = load_model(&cfg.checkpoint)?;
        check_compatible(&m, &panel)?;
        m
    } else {
        let dims = model_dims(cfg, &panel);
        dims.validate()?;
        RvraeModel::new(dims, cfg.seed)?
    };
    let t = model.dims.window;
    let train_w = windows_in(&panel, split.train.clone(), t)?;
    let val_w = windows_in(&panel, split.validation.clone(), t)?;
    info!("{} training and {} validation windows", train_w.len(), val_w.len());
    let outcome = if cfg.epochs == 0 {
        None
    } else {
        match train(model.clone(), &train_w, &val_w, &train_cfg, exec(cfg)) {
            Ok(o) => Some(o),
            Err(Error::Diverged { epoch, last_good }) => {
                write_checkpoint(&last_good, &cfg.checkpoint)?;
                return Err(Error::Diverged { epoch, last_good }.into());
            }
            Err(e) => return Err(e.into()),
        }
    };
    let mut w = csv::Writer::from_writer(create(&cfg.history)?);
    w.write_record([
        "epoch",
        "train_recon",
        "train_kl",
        "val_recon",
        "val_kl",
        "total",
        "val_total",
    ])
    .map_err(Error::from)?;
    let Some(outcome) = outcome else {
        w.flush().map_err(Error::from)?;
        write_checkpoint(&model, &cfg.checkpoint)?;
        return Ok(format!("0 epochs; wrote initial model to {}", cfg.checkpoint.display()));
    };
    for r in &outcome.history {
        w.write_record([
            r.epoch.to_string(),
            r.train.reconstruction.to_string(),
            r.train.kl.to_string(),
            r.validation.reconstruction.to_string(),
            r.validation.kl.to_string(),
            r.train.total.to_string(),
            r.validation.total.to_string(),
        ])
        .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    write_checkpoint(&outcome.model, &cfg.checkpoint)?;
    Ok(format!(
        "{} epochs, best epoch {}; wrote {}",
        outcome.history.len(),
        outcome.best_epoch,
        cfg.checkpoint.display()
    ))
}

/// Scores the checkpoint on the test months, or runs the stock-omission
/// protocol when `omit_m` is set.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<String> {
    require_file("data", &cfg.data)?;
    require_file("checkpoint", &cfg.checkpoint)?;
    prepare_output("report", &cfg.report)?;
    let portfolio = cfg.portfolio_spec();
    portfolio.validate()?;
    let panel = load_panel(cfg)?;
    let split = split_for(cfg, &panel)?;
    let model = load_model(&cfg.checkpoint)?;
    check_compatible(&model, &panel)?;
    let options = EvalOptions {
        portfolio,
        ..Default::default()
    };
    if cfg.omit_m.is_empty() {
        let report = evaluate(&model, &panel, split.test.clone(), &options, exec(cfg))?;
        write_report_csv(&report, create(&cfg.report)?)?;
        write_months_csv(&report, create(&sibling(&cfg.report, "months"))?)?;
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        return Ok(format!(
            "total R2 {:.4}, rank IC {}, Sharpe gross {} net {}",
            report.total_r2,
            show(report.rank_ic_mean),
            show(report.sharpe_gross),
            show(report.sharpe_net)
        ));
    }
    if cfg.seeds == 0 {
        return Err(ConfigError {
            key: "seeds".into(),
            message: "must be positive".into(),
        }
        .into());
    }
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|j| cfg.seed + j).collect();
    let runs = omission_protocol(
        &panel,
        &split,
        model.dims,
        &train_cfg,
        &options,
        &cfg.omit_m,
        &seeds,
        exec(cfg),
    )?;
    let summary = summarize_omission(&runs);
    write_omission_summary_csv(&summary, create(&cfg.report)?)?;
    write_omission_runs_csv(&runs, create(&sibling(&cfg.report, "runs"))?)?;
    Ok(format!("{} omission runs; wrote {}", runs.len(), cfg.report.display()))
}

/// Forecasts the cross-section of `date` (the last panel month by default)
/// from the months before it.
pub fn cmd_predict(cfg: &RunConfig) -> CliResult<String> {
    require_file("data", &cfg.data)?;
    require_file("checkpoint", &cfg.checkpoint)?;
    prepare_output("predictions", &cfg.predictions)?;
    let panel = load_panel(cfg)?;
    let model = load_model(&cfg.checkpoint)?;
    check_compatible(&model, &panel)?;
    let target = if cfg.date.is_empty() {
        panel.n_dates() - 1
    } else {
        let date = cfg.date.parse().map_err(|e: Error| ConfigError {
            key: "date".into(),
            message: e.to_string(),
        })?;
        panel.dates().iter().position(|d| *d == date).ok_or_else(|| ConfigError {
            key: "date".into(),
            message: format!("{date} is not in the panel"),
        })?
    };
    let window = forecast_window(&panel, target, model.dims.window)?;
    let p = predict(&model, &window)?;
    let date = panel.dates()[target];

    let mut w = csv::Writer::from_writer(create(&cfg.predictions)?);
    let k = p.betas.cols();
    let mut header: Vec<String> = ["date", "ticker", "expected_return", "return_stddev", "total_stddev"]
        .map(String::from)
        .to_vec();
    header.extend((1..=k).map(|j| format!("b{j}")));
    w.write_record(&header).map_err(Error::from)?;
    for (i, ticker) in panel.tickers().iter().enumerate() {
        let mut rec = vec![
            date.to_string(),
            ticker.clone(),
            p.expected_returns.data()[i].to_string(),
            p.return_stddev.data()[i].to_string(),
            p.total_stddev.data()[i].to_string(),
        ];
        rec.extend(p.betas.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    write_factors_csv(
        &sibling(&cfg.predictions, "factors"),
        &[date],
        &[p.factors.data().to_vec()],
    )?;
    Ok(format!(
        "forecast {} for {} stocks; wrote {}",
        date,
        panel.n_stocks(),
        cfg.predictions.display()
    ))
}

/// Central-difference check of the loss gradient on a small synthetic
/// window. Fails with the worst parameter's name.
pub fn cmd_gradcheck(cfg: &RunConfig) -> CliResult<String> {
    let corrupt = if cfg.corrupt_backward.is_empty() {
        None
    } else {
        Some(OpKind::parse(&cfg.corrupt_backward).ok_or_else(|| ConfigError {
            key: "corrupt_backward".into(),
            message: format!("unknown operation `{}`", cfg.corrupt_backward),
        })?)
    };
    if !(cfg.grad_step > 0.0 && cfg.grad_tol > 0.0) {
        return Err(ConfigError {
            key: "grad_step".into(),
            message: "step and tolerance must be positive".into(),
        }
        .into());
    }
    let dims = Dims::new(
        cfg.grad_n_stocks,
        cfg.grad_n_factors,
        cfg.grad_hidden,
        cfg.grad_n_chars,
        cfg.grad_window,
    );
    dims.validate()?;
    let spec = SyntheticSpec {
        n_stocks: dims.n_stocks,
        k_true: dims.n_factors,
        n_chars: dims.n_chars,
        t_total: dims.window + 1,
        seed: cfg.seed,
        ..SyntheticSpec::default()
    };
    let (panel, _) = generate_synthetic(&spec)?;
    let window = window_ending(&panel, dims.window, dims.window)?;
    let model = RvraeModel::new(dims, cfg.seed)?;
    let report = loss_gradcheck(
        &model,
        &window,
        cfg.lambda,
        cfg.seed,
        exec(cfg),
        cfg.grad_step,
        cfg.grad_tol,
        corrupt,
    )?;
    let mut lines: Vec<String> = report
        .params
        .iter()
        .map(|p| {
            let verdict = if p.max_rel_error <= report.tol { "ok" } else { "FAIL" };
            format!("{:<24} {:.3e} {verdict}", p.name, p.max_rel_error)
        })
        .collect();
    if !report.passed() {
        let worst = report.worst_param.clone().unwrap_or_default();
        return Err(CliError::Check(format!(
            "{}\ngradient check failed at `{worst}`: relative error {:.3e} exceeds {:.1e}",
            lines.join("\n"),
            report.max_rel_error,
            report.tol
        )));
    }
    lines.push(format!(
        "gradient check passed: max relative error {:.3e} <= {:.1e}",
        report.max_rel_error, report.tol
    ));
    Ok(lines.join("\n"))
}
