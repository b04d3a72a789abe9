//! Command-line front end for the RVRAE factor model.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{cmd_eval, cmd_gen, cmd_gradcheck, cmd_predict, cmd_train, CliError, CliResult};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "rvrae", version, about = "Train and evaluate the RVRAE dynamic factor model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic panel
    Gen(RunArgs),
    /// Fit a model and write a checkpoint
    Train(RunArgs),
    /// Score a checkpoint on the test months
    Eval(RunArgs),
    /// Forecast one month
    Predict(RunArgs),
    /// Check loss gradients against finite differences
    Gradcheck(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// File of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `--key value` overrides, applied after the config file
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub overrides: Vec<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply_flags(&self.overrides)?;
        Ok(cfg)
    }
}

fn dispatch(command: &Command) -> CliResult<String> {
    let (args, f): (&RunArgs, fn(&RunConfig) -> CliResult<String>) = match command {
        Command::Gen(a) => (a, cmd_gen),
        Command::Train(a) => (a, cmd_train),
        Command::Eval(a) => (a, cmd_eval),
        Command::Predict(a) => (a, cmd_predict),
        Command::Gradcheck(a) => (a, cmd_gradcheck),
    };
    f(&args.resolve()?)
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs `command` on an already resolved config.
pub fn run_config(command: &str, cfg: &RunConfig) -> Result<String, CliError> {
    match command {
        "gen" => cmd_gen(cfg),
        "train" => cmd_train(cfg),
        "eval" => cmd_eval(cfg),
        "predict" => cmd_predict(cfg),
        "gradcheck" => cmd_gradcheck(cfg),
        other => Err(config::ConfigError {
            key: "command".into(),
            message: format!("unknown command `{other}`"),
        }
        .into()),
    }
}
