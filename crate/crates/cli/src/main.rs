use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use foppa_core::config::validate_config;
use foppa_core::pipeline::{RunOptions, Runner, Stage};
use foppa_core::Error;

#[derive(Parser)]
#[command(name = "foppa", version, about = "Clean TED award tables into the FOPPA relational schema")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Configuration file (TOML).
    #[arg(long, global = true, default_value = "foppa.toml")]
    config: PathBuf,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for evaluation sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the award tables into lots and agent occurrences.
    Ingest,
    /// Repair and normalize award criteria.
    Criteria,
    /// Normalize agent names and addresses.
    Normalize,
    /// Recover missing SIRETs from the registry.
    Identify,
    /// Merge duplicate agent occurrences.
    Merge,
    /// Write the output tables and the SQL dump.
    Emit,
    /// Write the evaluation report.
    Evaluate {
        /// Hide a sample of known SIRETs and measure their recovery.
        #[arg(long)]
        mask: bool,
    },
    /// Run the stages in order.
    Pipeline {
        #[arg(long, default_value = "ingest")]
        stage_from: Stage,
        #[arg(long, default_value = "evaluate")]
        stage_to: Stage,
        /// Evaluate in masked mode.
        #[arg(long)]
        mask: bool,
    },
    /// Check the configuration and list every problem found.
    Validate,
}

fn run(cli: Cli) -> Result<(), Error> {
    let g = cli.global;
    let mut config = validate_config(&g.config).map_err(|errs| Error::Config(errs.join("\n  ")))?;
    if let Some(out) = g.out {
        config.output = out;
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(jobs) = g.jobs {
        config.jobs = jobs;
    }
    let (stages, mask) = match cli.command {
        Command::Validate => {
            println!("{}: ok", g.config.display());
            return Ok(());
        }
        Command::Ingest => ((Stage::Ingest, Stage::Ingest), false),
        Command::Criteria => ((Stage::Criteria, Stage::Criteria), false),
        Command::Normalize => ((Stage::Normalize, Stage::Normalize), false),
        Command::Identify => ((Stage::Identify, Stage::Identify), false),
        Command::Merge => ((Stage::Merge, Stage::Merge), false),
        Command::Emit => ((Stage::Emit, Stage::Emit), false),
        Command::Evaluate { mask } => ((Stage::Evaluate, Stage::Evaluate), mask),
        Command::Pipeline {
            stage_from,
            stage_to,
            mask,
        } => ((stage_from, stage_to), mask),
    };
    let runner = Runner::new(config, RunOptions { mask })?;
    runner.run_range(stages.0, stages.1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("foppa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
