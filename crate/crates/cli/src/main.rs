//! `fairgen`: fairness audits of tabular classifiers through canonical sets.

mod config;
mod error;
mod manifest;
mod report;
mod workflow;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Dataset, Mode, Overrides, RunConfig};
use error::CliError;
use workflow::Workspace;

#[derive(Parser, Debug)]
#[command(
    name = "fairgen",
    version,
    about = "Audit a classifier with generated canonical sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    dataset: Option<Dataset>,
    /// Audit modes, comma-separated or repeated.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    mode: Vec<Mode>,
    /// Artifact directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Generator training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Rows per canonical set.
    #[arg(long, global = true)]
    samples: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Load the dataset and write the train/test split and schema.
    Prepare,
    /// Train the built-in classifier (model.source = "train_mlp").
    TrainModel,
    /// Score the test rows with the audited model.
    Score,
    /// Train the generator on the scored rows.
    TrainGan,
    /// Run every step, generate canonical sets, write metrics and figures.
    Audit,
    /// Render figures and the text summary from an audit's tables.
    Report,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            dataset: self.dataset,
            modes: self.mode.clone(),
            out: self.out.clone(),
            seed: self.seed,
            epochs: self.epochs,
            samples: self.samples,
        }
    }

    /// `--config`, else the configuration saved by an earlier step in `--out`.
    fn config(&self) -> Result<RunConfig, CliError> {
        let saved = self
            .out
            .as_ref()
            .map(|o| o.join("config.toml"))
            .filter(|p| p.exists());
        let path = match (&self.config, self.dataset) {
            (Some(p), _) => Some(p.clone()),
            (None, None) => saved,
            (None, Some(_)) => None,
        };
        RunConfig::load(path.as_deref(), &self.overrides())
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.command == Command::Report {
        let out = match &cli.out {
            Some(o) => o.clone(),
            None => cli.config()?.out,
        };
        let mut m = manifest::Manifest::read(&out)?;
        for f in report::render(&out)? {
            log::info!("wrote {}", f.display());
        }
        return m.write(&out);
    }
    let mut ws = Workspace::open(cli.config()?)?;
    let result = match cli.command {
        Command::Prepare => ws.prepare(),
        Command::TrainModel => ws.train_model(),
        Command::Score => ws.score(),
        Command::TrainGan => ws.train_gan(),
        Command::Audit => ws
            .prepare()
            .and_then(|_| ws.train_model())
            .and_then(|_| ws.score())
            .and_then(|_| ws.train_gan())
            .and_then(|_| ws.run_audits())
            .and_then(|_| report::render(&ws.out).map(|_| ())),
        Command::Report => unreachable!(),
    };
    // Record whatever completed, even when a later step failed.
    ws.finish()?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = e.record();
            let line = serde_json::to_string(&record).expect("record serializes");
            eprintln!("{line}");
            if let Some(out) = cli.out.as_ref().filter(|o| o.is_dir()) {
                let _ = std::fs::write(out.join("error.json"), &line);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
