use std::path::PathBuf;
use std::process::ExitCode;

use aum::config::Axis;
use aum::{commands, experiment, CliError, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aum", version, about = "Uncertainty-aware multimodal graph learning on synthetic cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one cohort file per seed.
    Generate(Common),
    /// Train on previously generated cohorts and evaluate on the test split.
    Train(Common),
    /// Retrain over a grid of missing ratios or noise levels.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `missing_ratio` or `noise`
        #[arg(long, value_parser = |s: &str| s.parse::<Axis>())]
        axis: Axis,
    },
    /// Train every configured variant over the seed list.
    Ablate(Common),
}

fn setup(c: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let config = ExperimentConfig::load(&c.config)?.with_seed(c.seed);
    let out = c
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?;
    Ok((config, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => {
            let (config, out) = setup(&c)?;
            for s in commands::generate(&config, &out)? {
                println!("{s}");
            }
        }
        Command::Train(c) => {
            let (config, out) = setup(&c)?;
            for r in commands::train(&config, &out, experiment::workers()?)? {
                println!(
                    "{} seed {}: test auc_roc={} auc_prc={} (best epoch {})",
                    r.variant, r.seed, r.report.auc_roc, r.report.auc_prc, r.best_epoch
                );
            }
        }
        Command::Sweep { common, axis } => {
            let (config, out) = setup(&common)?;
            let s = commands::sweep(&config, axis, &out, experiment::workers()?)?;
            print!("{}", s.summary);
        }
        Command::Ablate(c) => {
            let (config, out) = setup(&c)?;
            let a = commands::ablate(&config, &out, experiment::workers()?)?;
            print!("{}", a.summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
