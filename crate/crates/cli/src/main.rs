//! Command-line front end for the beam-selection experiment pipeline.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use sembeam::harness::{cmd_betasearch, cmd_eval, cmd_gen, cmd_report, cmd_train, ExperimentConfig};
use sembeam::Error;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(
    name = "sembeam",
    version,
    about = "Hybrid semantic/GPS mmWave beam selection experiments"
)]
struct Cli {
    /// Experiment config (TOML). The bundled default is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reseeds data generation, clustering and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/val/test splits.
    Gen {
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Build the knowledge base and train all models.
    Train {
        /// Also train the LeNet + GPS baseline.
        #[arg(long)]
        baseline2: bool,
    },
    /// Calibrate fusion weights on the validation split.
    Betasearch {
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Evaluate on the test split.
    Eval {
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Merge reports of one or more runs into one CSV (stdout, or `--out` file).
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<serde_json::Value, Error> {
    if let Command::Report { runs } = &cli.command {
        let csv = cmd_report(runs)?;
        return match &cli.out {
            Some(path) => {
                fs::write(path, &csv).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                Ok(json!({ "report": path, "rows": csv.lines().count() - 1 }))
            }
            None => {
                print!("{csv}");
                Ok(serde_json::Value::Null)
            }
        };
    }
    let cfg = load_config(&cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("run"));
    Ok(match &cli.command {
        Command::Gen { scenario } => serde_json::to_value(cmd_gen(&cfg, &out, scenario.as_deref())?)?,
        Command::Train { baseline2 } => serde_json::to_value(cmd_train(&cfg, &out, *baseline2)?)?,
        Command::Betasearch { scenario } => serde_json::to_value(cmd_betasearch(&cfg, &out, scenario.as_deref())?)?,
        Command::Eval { scenario } => serde_json::to_value(cmd_eval(&cfg, &out, scenario.as_deref())?)?,
        Command::Report { .. } => unreachable!("handled above"),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
