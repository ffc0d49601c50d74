use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ltlab::cli::{cmd_gen, cmd_mlf, cmd_nc_eval, cmd_train, cmd_weights};
use ltlab::config::ExperimentConfig;
use ltlab::trainer::MethodName;
use ltlab::Execution;

#[derive(Parser)]
#[command(name = "ltlab", version, about = "Long-tailed classification lab: inverse loss reweighting, NC metrics, Mittag-Leffler LR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic long-tailed splits as CSV plus a JSON manifest.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one run per seed and write metrics, parameters and summaries.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Repeatable; defaults to train.seed from the config.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        /// Run seeds and evaluation passes on the calling thread only.
        #[arg(long)]
        sequential: bool,
    },
    /// Neural Collapse metrics of a feature dump against a classifier dump.
    NcEval {
        /// CSV of features with a `label` column.
        #[arg(long)]
        features: PathBuf,
        /// CSV with one row of weights per class and an optional `bias` column.
        #[arg(long)]
        classifier: PathBuf,
        /// Comma-separated per-class average losses; adds `rho`.
        #[arg(long, value_delimiter = ',')]
        losses: Option<Vec<f64>>,
    },
    /// Closed-form per-class weights for given class losses.
    Weights {
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        losses: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, value_delimiter = ',')]
        w0: Option<Vec<f64>>,
    },
    /// Evaluate E_a(-z) with the schedule's branch rule.
    Mlf {
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
        #[arg(long, allow_negative_numbers = true)]
        z: f64,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn out_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = load_config(config.as_ref())?;
            let out = out_dir(out, &cfg);
            let files = cmd_gen(&cfg, &out)?;
            println!("wrote {}", files.train_csv.display());
            println!("wrote {}", files.test_csv.display());
            println!("wrote {}", files.manifest.display());
        }
        Command::Train { config, seeds, out, method, sequential } => {
            let cfg = load_config(config.as_ref())?;
            let method = method.map(|m| m.parse::<MethodName>()).transpose()?;
            let out = out_dir(out, &cfg);
            let exec = if sequential { Execution::Sequential } else { Execution::default() };
            let result = cmd_train(&cfg, &seeds, method, &out, exec)?;
            println!("{}", serde_json::to_string_pretty(&result.aggregate)?);
        }
        Command::NcEval { features, classifier, losses } => {
            let report = cmd_nc_eval(&features, &classifier, losses.as_deref(), Execution::default())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Weights { losses, alpha, w0 } => {
            let w = cmd_weights(&losses, alpha, w0.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&w)?);
        }
        Command::Mlf { a, z } => {
            print!("{}", cmd_mlf(a, z).context("evaluating the Mittag-Leffler function")?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<ltlab::Error>())
                .map_or(1, ltlab::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
