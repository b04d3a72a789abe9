//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rvrae::data::{SyntheticSpec, DEFAULT_BETA_INTERCEPT, DEFAULT_BETA_SCALE};
use rvrae::eval::PortfolioSpec;
use rvrae::model::TrainConfig;

/// A rejected key or value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    pub n_stocks: usize,
    pub k_true: usize,
    pub n_chars: usize,
    pub t_total: usize,
    pub sigma_f: f64,
    pub sigma_u: f64,
    pub rho: f64,
    pub beta_scale: f64,
    pub beta_intercept: f64,

    pub n_factors: usize,
    pub hidden: usize,
    /// 0 means equal to `n_factors`.
    pub beta_hidden: usize,
    pub window: usize,
    pub normalize: bool,

    pub lambda: f64,
    pub mc_samples: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub resume: bool,
    pub parallel: bool,

    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,

    pub quantile: f64,
    pub cost_rate: f64,
    pub rf: f64,

    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report: PathBuf,
    pub predictions: PathBuf,
    /// Forecast month `YYYY-MM`; the last panel month when empty.
    pub date: String,

    pub omit_m: Vec<usize>,
    pub seeds: usize,

    pub grad_n_stocks: usize,
    pub grad_n_factors: usize,
    pub grad_hidden: usize,
    pub grad_n_chars: usize,
    pub grad_window: usize,
    pub grad_step: f64,
    pub grad_tol: f64,
    pub corrupt_backward: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let train = TrainConfig::default();
        let port = PortfolioSpec::default();
        Self {
            seed: 0,
            n_stocks: synth.n_stocks,
            k_true: synth.k_true,
            n_chars: synth.n_chars,
            t_total: synth.t_total,
            sigma_f: synth.sigma_f,
            sigma_u: synth.sigma_u,
            rho: synth.rho,
            beta_scale: DEFAULT_BETA_SCALE,
            beta_intercept: DEFAULT_BETA_INTERCEPT,
            n_factors: 5,
            hidden: 16,
            beta_hidden: 0,
            window: 12,
            normalize: true,
            lambda: train.lambda,
            mc_samples: train.mc_samples,
            lr: train.lr,
            epochs: train.epochs,
            patience: train.patience,
            resume: false,
            parallel: true,
            split_train: 15.0,
            split_val: 3.0,
            split_test: 3.0,
            quantile: port.quantile,
            cost_rate: port.cost_rate,
            rf: 0.0,
            data: "panel.csv".into(),
            checkpoint: "model.ckpt".into(),
            history: "history.csv".into(),
            report: "report.csv".into(),
            predictions: "predictions.csv".into(),
            date: String::new(),
            omit_m: Vec::new(),
            seeds: 10,
            grad_n_stocks: 8,
            grad_n_factors: 2,
            grad_hidden: 4,
            grad_n_chars: 6,
            grad_window: 4,
            grad_step: 1e-5,
            grad_tol: 1e-4,
            corrupt_backward: String::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError::new(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::new(key, format!("expected true or false, got `{other}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Sets one key. Dashes in `key` are read as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        let v = value.trim();
        match k {
            "seed" => self.seed = parse(k, v)?,
            "n_stocks" => self.n_stocks = parse(k, v)?,
            "k_true" => self.k_true = parse(k, v)?,
            "n_chars" => self.n_chars = parse(k, v)?,
            "t_total" => self.t_total = parse(k, v)?,
            "sigma_f" => self.sigma_f = parse(k, v)?,
            "sigma_u" => self.sigma_u = parse(k, v)?,
            "rho" => self.rho = parse(k, v)?,
            "beta_scale" => self.beta_scale = parse(k, v)?,
            "beta_intercept" => self.beta_intercept = parse(k, v)?,
            "n_factors" => self.n_factors = parse(k, v)?,
            "hidden" => self.hidden = parse(k, v)?,
            "beta_hidden" => self.beta_hidden = parse(k, v)?,
            "window" => self.window = parse(k, v)?,
            "normalize" => self.normalize = parse_bool(k, v)?,
            "lambda" => self.lambda = parse(k, v)?,
            "mc_samples" => self.mc_samples = parse(k, v)?,
            "lr" => self.lr = parse(k, v)?,
            "epochs" => self.epochs = parse(k, v)?,
            "patience" => self.patience = parse(k, v)?,
            "resume" => self.resume = parse_bool(k, v)?,
            "parallel" => self.parallel = parse_bool(k, v)?,
            "split_train" => self.split_train = parse(k, v)?,
            "split_val" => self.split_val = parse(k, v)?,
            "split_test" => self.split_test = parse(k, v)?,
            "quantile" => self.quantile = parse(k, v)?,
            "cost_rate" => self.cost_rate = parse(k, v)?,
            "rf" => self.rf = parse(k, v)?,
            "data" => self.data = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "history" => self.history = v.into(),
            "report" => self.report = v.into(),
            "predictions" => self.predictions = v.into(),
            "date" => self.date = v.to_string(),
            "omit_m" => self.omit_m = parse_list(k, v)?,
            "seeds" => self.seeds = parse(k, v)?,
            "grad_n_stocks" => self.grad_n_stocks = parse(k, v)?,
            "grad_n_factors" => self.grad_n_factors = parse(k, v)?,
            "grad_hidden" => self.grad_hidden = parse(k, v)?,
            "grad_n_chars" => self.grad_n_chars = parse(k, v)?,
            "grad_window" => self.grad_window = parse(k, v)?,
            "grad_step" => self.grad_step = parse(k, v)?,
            "grad_tol" => self.grad_tol = parse(k, v)?,
            "corrupt_backward" => self.corrupt_backward = v.to_string(),
            _ => return Err(ConfigError::new(k, "unknown key")),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line, format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `--key value` / `--key=value` overrides. A flag given with no
    /// value means `true`.
    pub fn apply_flags(&mut self, args: &[String]) -> Result<(), ConfigError> {
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| ConfigError::new(arg, "expected a `--key value` flag"))?;
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v)?;
                i += 1;
                continue;
            }
            match args.get(i + 1) {
                Some(v) if !v.starts_with("--") => {
                    self.set(key, v)?;
                    i += 2;
                }
                _ => {
                    self.set(key, "true")?;
                    i += 1;
                }
            }
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_stocks: self.n_stocks,
            k_true: self.k_true,
            n_chars: self.n_chars,
            t_total: self.t_total,
            seed: self.seed,
            sigma_f: self.sigma_f,
            sigma_u: self.sigma_u,
            rho: self.rho,
            beta_scale: self.beta_scale,
            beta_intercept: self.beta_intercept,
            ..SyntheticSpec::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            mc_samples: self.mc_samples,
            lr: self.lr,
            epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn portfolio_spec(&self) -> PortfolioSpec {
        PortfolioSpec {
            quantile: self.quantile,
            cost_rate: self.cost_rate,
            risk_free: if self.rf == 0.0 { Vec::new() } else { vec![self.rf] },
        }
    }
}

/// `dir/stem.ext` becomes `dir/stem_suffix.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}_{suffix}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn file_then_flags_flag_wins() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nepochs = 7\nsigma-u=0.2\n\nomit_m = 50, 100\n").unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.sigma_u, 0.2);
        assert_eq!(c.omit_m, vec![50, 100]);
        c.apply_flags(&strings(&["--epochs", "0", "--omit-m=150", "--resume"])).unwrap();
        assert_eq!(c.epochs, 0);
        assert_eq!(c.omit_m, vec![150]);
        assert!(c.resume);
    }

    #[test]
    fn unknown_and_malformed_keys_are_named() {
        let mut c = RunConfig::default();
        assert_eq!(c.set("bogus", "1").unwrap_err().key, "bogus");
        assert_eq!(c.set("epochs", "x").unwrap_err().key, "epochs");
        assert!(c.apply_text("just words\n").is_err());
        assert!(c.apply_flags(&strings(&["epochs", "3"])).is_err());
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/panel.csv"), "factors"), PathBuf::from("out/panel_factors.csv"));
    }
}
