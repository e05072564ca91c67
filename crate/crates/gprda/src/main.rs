use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gprda::{Approach, Experiment, Overrides};
use gprda_core::arch::ModelKind;
use gprda_core::{Error, Result};

/// Sim-to-real retrieval of layered-media parameters from radar traces.
#[derive(Parser, Debug)]
#[command(name = "gprda", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; defaults to the configured one, relative to the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the source grid and the target scans.
    Generate(Common),
    /// Sobol sensitivity of the source response.
    Sobol(Common),
    /// Train one flat approach.
    Train {
        #[command(flatten)]
        common: Common,
        /// cnn, dann, phydann1 or phydann2.
        #[arg(long)]
        approach: String,
    },
    /// Run the hierarchy for every target case.
    Hier {
        #[command(flatten)]
        common: Common,
        /// dann, phydann1 or phydann2.
        #[arg(long)]
        variant: String,
    },
    /// Score the configured approaches against the held-out truth.
    Eval(Common),
    /// The whole pipeline.
    Bench(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate(c) | Command::Sobol(c) | Command::Eval(c) | Command::Bench(c) => c,
            Command::Train { common, .. } | Command::Hier { common, .. } => common,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size worker pool: {e}")))?;
    }
    let exp = Experiment::load(
        &common.config,
        &Overrides {
            seed: common.seed,
            out: common.out.clone(),
        },
    )?;
    log::info!(
        "experiment `{}` seed {} -> {}",
        exp.config.name,
        exp.config.seed,
        exp.out.display()
    );
    match &cli.command {
        Command::Generate(_) => gprda::cmd_generate(&exp).map(drop),
        Command::Sobol(_) => gprda::cmd_sobol(&exp).map(drop),
        Command::Train { approach, .. } => gprda::cmd_train(&exp, Approach::parse(approach)?).map(drop),
        Command::Hier { variant, .. } => {
            let kind: ModelKind = serde_json::from_value(serde_json::Value::String(variant.clone()))
                .map_err(|_| Error::Config(format!("unknown variant `{variant}`")))?;
            gprda::cmd_hier(&exp, kind).map(drop)
        }
        Command::Eval(_) => {
            let (summary, _) = gprda::cmd_eval(&exp)?;
            print!("{}", gprda::format_summary(&summary));
            Ok(())
        }
        Command::Bench(_) => {
            let summary = gprda::cmd_bench(&exp)?;
            print!("{}", gprda::format_summary(&summary));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GPRDA_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(gprda::exit_code(&e) as u8)
        }
    }
}
