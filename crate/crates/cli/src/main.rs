use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use config::FileConfig;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "editrefiner", version, about = "Flaw-aware refinement harness for image edits")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the mock backends.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent sessions for `refine`.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build ground-truth flaw maps for every image in a manifest.
    BuildGt(commands::gt::BuildGtArgs),
    /// Score predicted maps against ground truth.
    EvalSaliency(commands::saliency::EvalSaliencyArgs),
    /// Aggregate raw ratings into MOS.
    ComputeMos(commands::mos::ComputeMosArgs),
    /// Run refinement sessions for every image in a manifest.
    Refine(commands::refine::RefineArgs),
    /// Evaluate objective fixtures.
    EvalObjectives(commands::objectives::EvalObjectivesArgs),
}

/// Global settings after merging flags over the config file.
#[derive(Debug)]
pub struct Globals {
    pub seed: u64,
    pub parallelism: usize,
    pub file: FileConfig,
}

fn init_logging(level: &str) -> CliResult<()> {
    let filter: log::LevelFilter = level
        .parse()
        .map_err(|_| error::CliError::validation(format!("unknown log level {level:?}")))?;
    env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let file = FileConfig::load(cli.global.config.as_deref())?;
    let level = cli
        .global
        .log_level
        .clone()
        .or_else(|| file.log_level.clone())
        .unwrap_or_else(|| "info".into());
    init_logging(&level)?;
    let parallelism = cli.global.parallelism.or(file.parallelism).unwrap_or(1);
    if parallelism == 0 {
        return Err(error::CliError::validation("--parallelism must be >= 1"));
    }
    let globals = Globals {
        seed: cli.global.seed.or(file.seed).unwrap_or(0),
        parallelism,
        file,
    };
    match cli.command {
        Command::BuildGt(a) => commands::gt::run(a, &globals),
        Command::EvalSaliency(a) => commands::saliency::run(a, &globals),
        Command::ComputeMos(a) => commands::mos::run(a, &globals),
        Command::Refine(a) => commands::refine::run(a, &globals),
        Command::EvalObjectives(a) => commands::objectives::run(a, &globals),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
