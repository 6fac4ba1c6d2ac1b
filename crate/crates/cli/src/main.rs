use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use bpgnn_cli::commands::Experiment;
use bpgnn_cli::config::ExperimentConfig;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bpgnn", version, about = "Fit graph neural networks to noisy belief-propagation traces")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Accept artifacts written under a different configuration.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the desk-scale configuration to a file.
    InitConfig {
        path: PathBuf,
        /// Output directory recorded in the configuration.
        #[arg(long, default_value = "runs/desk")]
        output_dir: PathBuf,
    },
    /// Sample the Gaussian graphical models.
    GenPgm,
    /// Run noisy belief propagation and store the traces.
    GenTraces,
    /// Train the GNN ensemble on all models.
    Train {
        /// Train the control without vertex and edge attributes.
        #[arg(long)]
        colorless: bool,
    },
    /// Random architecture search.
    Search,
    /// PCA of latent clouds and the canonical-function grids.
    Analyze,
    /// Fit the maps between graph attributes and learned parameters.
    FitTranslator,
    /// Recover held-out precision matrices from learned parameters.
    Recover,
    /// Build GNNs for held-out models from their precision matrices.
    Construct,
    /// Compare trained, constructed and colorless models on held-out models.
    Evaluate,
    /// Write the CSV tables behind each figure.
    ExportPlots,
    /// gen-pgm through export-plots in order, without search.
    All,
}

fn run(cli: Cli) -> Result<()> {
    if let Command::InitConfig { path, output_dir } = &cli.command {
        let text = serde_json::to_string_pretty(&ExperimentConfig::desk(output_dir))?;
        std::fs::write(path, text + "\n")?;
        return Ok(());
    }
    let Some(path) = &cli.config else {
        bail!("--config is required for this command");
    };
    let exp = Experiment::new(ExperimentConfig::load(path)?, cli.force);
    std::fs::create_dir_all(exp.dir())?;
    match cli.command {
        Command::InitConfig { .. } => unreachable!(),
        Command::GenPgm => exp.gen_pgm(),
        Command::GenTraces => exp.gen_traces(),
        Command::Train { colorless } => exp.train(colorless).map(drop),
        Command::Search => exp.search(),
        Command::Analyze => exp.analyze(),
        Command::FitTranslator => exp.fit_translator(),
        Command::Recover => exp.recover(),
        Command::Construct => exp.construct(),
        Command::Evaluate => exp.evaluate(),
        Command::ExportPlots => exp.export_plots(),
        Command::All => {
            exp.gen_pgm()?;
            exp.gen_traces()?;
            exp.train(false)?;
            exp.train(true)?;
            exp.analyze()?;
            exp.fit_translator()?;
            exp.recover()?;
            exp.construct()?;
            exp.evaluate()?;
            exp.export_plots()
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
