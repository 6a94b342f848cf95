use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pdnet_cli::commands::{self, Session};
use pdnet_cli::config::RunConfig;
use pdnet_cli::Failure;

#[derive(Parser)]
#[command(name = "pdnet", version, about = "Train and evaluate unrolled primal-dual restoration networks")]
struct Cli {
    /// Print training progress.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,

    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the degraded dataset and its manifest.
    Degrade(Common),
    /// Train a network and export models, history and filters.
    Train(Common),
    /// Score a model on a split, with an optional robustness table.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model file; defaults to model_best.json in the output directory.
        #[arg(short, long)]
        model: Option<PathBuf>,
    },
    /// Restore images with the iterative primal-dual solver.
    Solve(Common),
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        flip_output_sign: bool,
    },
    /// Write analysis-operator rows as PGM tile grids.
    ExportFilters {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        model: Option<PathBuf>,
        /// 1-based layer; defaults to the last one.
        #[arg(long)]
        layer: Option<usize>,
    },
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&common.config).map_err(Failure::Validation)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Degrade(c) => commands::degrade(&load(&c)?),
        Command::Train(c) => commands::train(&Session {
            config: load(&c)?,
            verbose: cli.verbose,
        }),
        Command::Eval { common, model } => {
            let config = load(&common)?;
            let model = model.unwrap_or_else(|| commands::default_model(&config));
            commands::ensure_model(&model)?;
            commands::eval(
                &Session {
                    config,
                    verbose: cli.verbose,
                },
                &model,
            )
        }
        Command::Solve(c) => commands::solve(&Session {
            config: load(&c)?,
            verbose: cli.verbose,
        }),
        Command::Gradcheck {
            common,
            flip_output_sign,
        } => commands::run_gradcheck(&load(&common)?, flip_output_sign),
        Command::ExportFilters { common, model, layer } => {
            let config = load(&common)?;
            let model = model.unwrap_or_else(|| commands::default_model(&config));
            commands::ensure_model(&model)?;
            commands::export_filters(&config, &model, layer)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pdnet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
