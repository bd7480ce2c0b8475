use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ubp_cli::commands::{self, Context, Overrides};
use ubp_cli::config::SEED_ENV;
use ubp_cli::exit_code;
use ubp_core::uncertainty::Modality;

#[derive(Parser)]
#[command(name = "ubp", version, about = "Uncertainty-aware blood-pressure estimation on synthetic facial pulse data")]
struct Cli {
    /// Directory all other paths are relative to.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed. Falls back to UBP_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Train every (fold, modality) model and write checkpoints.
    Train {
        /// Comma-separated subset of rppg, ppg, img.
        #[arg(long, value_delimiter = ',')]
        modalities: Option<Vec<Modality>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        /// Run directory whose checkpoints initialise the networks.
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Evaluate a trained run: metrics, fusion, curves, subgroups and plots.
    Eval {
        /// Only regenerate the SVG plots from existing CSVs.
        #[arg(long)]
        report_only: bool,
    },
    /// Print the pooled metrics and subgroup tables.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = Overrides {
        seed: cli.seed,
        ..Default::default()
    };
    match &cli.command {
        Command::Synth { subjects } => overrides.subjects = *subjects,
        Command::Train {
            modalities,
            epochs,
            folds,
            ..
        } => {
            overrides.modalities = modalities.clone();
            overrides.epochs = *epochs;
            overrides.folds = *folds;
        }
        _ => {}
    }
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = Context::load(&cli.workdir, cli.config.as_deref(), &overrides, env_seed.as_deref()).and_then(|ctx| {
        match cli.command {
            Command::Synth { .. } => {
                let digest = commands::synth(&ctx)?;
                println!("dataset {} ({digest})", ctx.dataset_dir().display());
            }
            Command::Train { init_from, .. } => {
                let m = commands::train(&ctx, init_from.as_deref())?;
                println!("trained {} models into {}", m.jobs.len(), ctx.run_dir().display());
            }
            Command::Eval { report_only: true } => commands::render_plots(&ctx)?,
            Command::Eval { report_only: false } => {
                commands::eval(&ctx)?;
                println!("evaluation written to {}", ctx.eval_dir().display());
            }
            Command::Report => print!("{}", commands::report(&ctx)?),
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ubp: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
