mod analyze;
mod config;
mod icc;
mod output;
mod predict;
mod simulate;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use config::{Format, Overrides, RegressorKind};
use crt_conformal::{Error, Level};
use std::path::PathBuf;
use std::process::ExitCode;
use toml::Value;

/// Invalid input or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "crtconf", version, about = "Conformal inference for treatment effects in cluster randomized trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study on simulated trials.
    Simulate(ConfigArgs),
    /// Compute effect intervals for test clusters of a trial CSV.
    Analyze {
        /// Observed trial: cluster_id,treatment,outcome,x_1..,r_1..
        #[arg(long)]
        data: PathBuf,
        /// Test clusters; outcome and treatment may be empty.
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Apply a model saved by `analyze --save-model` to new covariates.
    Predict {
        /// Directory holding model.json.
        #[arg(long)]
        model: PathBuf,
        /// Covariates CSV; every member of a cluster must be present.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print the resolved configuration.
    Config {
        /// Print the built-in defaults and ignore every other source.
        #[arg(long)]
        defaults: bool,
        /// List the presets.
        #[arg(long)]
        presets: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Intracluster correlation of control outcomes.
    Icc {
        /// Trial CSV; without it a trial is simulated from the configuration.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args, Clone, Debug, Default)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration applied below the file.
    #[arg(long)]
    preset: Option<String>,
    /// Override any key, e.g. `--set forest_min_leaf=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated miscoverage levels.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, value_enum)]
    regressor: Option<RegressorArg>,
    #[arg(long)]
    level: Option<Level>,
    #[arg(long)]
    subgroup: Option<String>,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    dump: bool,
    #[arg(long)]
    save_model: bool,
    #[arg(long)]
    per_replicate: bool,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    full_precision: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum RegressorArg {
    Ols,
    Forest,
    Ensemble,
    Zero,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Csv,
    Json,
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        let mut flags = toml::Table::new();
        let mut put = |k: &str, v: Value| {
            flags.insert(k.to_string(), v);
        };
        if let Some(s) = self.seed {
            put("seed", Value::Integer(s as i64));
        }
        if let Some(a) = &self.alpha {
            put("alpha", Value::Array(a.iter().map(|v| Value::Float(*v)).collect()));
        }
        if let Some(g) = self.gamma {
            put("gamma", Value::Float(g));
        }
        if let Some(r) = self.replicates {
            put("replicates", Value::Integer(r as i64));
        }
        if let Some(f) = self.train_fraction {
            put("split", Value::String(format!("train_fraction:{f}")));
        }
        if let Some(r) = self.regressor {
            let kind = match r {
                RegressorArg::Ols => RegressorKind::Ols,
                RegressorArg::Forest => RegressorKind::Forest,
                RegressorArg::Ensemble => RegressorKind::Ensemble,
                RegressorArg::Zero => RegressorKind::Zero,
            };
            put("regressor", Value::try_from(kind).expect("enum serializes"));
        }
        if let Some(l) = self.level {
            put("levels", Value::Array(vec![Value::String(l.to_string())]));
        }
        if let Some(s) = &self.subgroup {
            put("subgroup", Value::String(s.clone()));
        }
        if let Some(k) = self.splits {
            put("splits", Value::Integer(k as i64));
        }
        if let Some(o) = &self.out {
            put("out", Value::String(o.display().to_string()));
        }
        if let Some(f) = self.format {
            let f = match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            };
            put("format", Value::try_from(f).expect("enum serializes"));
        }
        if let Some(p) = self.parallelism {
            put("parallelism", Value::Integer(p as i64));
        }
        for (flag, key) in [
            (self.dump, "dump"),
            (self.save_model, "save_model"),
            (self.per_replicate, "per_replicate"),
            (self.full_precision, "full_precision"),
        ] {
            if flag {
                put(key, Value::Boolean(true));
            }
        }
        Overrides { sets: self.sets.clone(), flags }
    }

    fn resolve(&self) -> Result<config::RunConfig> {
        config::resolve(self.preset.as_deref(), self.config.as_deref(), &self.overrides())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate::run(&args.resolve()?),
        Command::Analyze { data, test, config } => analyze::run(&config.resolve()?, &data, &test),
        Command::Predict { model, input, config } => predict::run(&config.resolve()?, &model, &input),
        Command::Config { defaults, presets, config } => {
            if presets {
                for (name, about, _) in config::PRESETS {
                    println!("{name:<16} {about}");
                }
                return Ok(());
            }
            let cfg = if defaults { config::RunConfig::default() } else { config.resolve()? };
            print!("{}", config::render(&cfg));
            Ok(())
        }
        Command::Icc { data, config } => icc::run(&config.resolve()?, data.as_deref()),
    }
}

/// Schema and configuration problems exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::Schema(_)
            | Error::DimensionMismatch { .. }
            | Error::DuplicateClusterId(_)
            | Error::NonBinaryTreatment { .. }
            | Error::EmptyCluster(_)
            | Error::MissingOutcome(_)
            | Error::ConstantWithinClusterViolation { .. }
            | Error::InvalidProbability(_)
            | Error::InvalidLevel(_)
            | Error::InvalidPredicate { .. }
            | Error::InvalidConfig(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
