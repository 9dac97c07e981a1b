//! Batch front end: `mdplab <check|simulate|blocks|rate> --config FILE
//! [--out DIR] [--seed N] [--threads N]`.
//!
//! Exit codes: 0 success, 1 a checker returned a fail verdict (the reason is
//! printed as JSON), 2 usage or configuration errors. `--threads` (or the
//! MDPLAB_THREADS variable) affects scheduling only; results are identical
//! for any worker count.

pub mod config;
pub mod dupkeys;
pub mod report;
pub mod tasks;

use clap::{Args, Parser, Subcommand};
use config::{load_config, CliError, TaskKind};
use report::{write_report, RunManifest};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "mdplab",
    version,
    about = "moderate-deviation laboratory batch runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate tail/moment conditions over the n-grid.
    Check(RunArgs),
    /// Estimate speed-scaled deviation probabilities.
    Simulate(RunArgs),
    /// Plan big/small blocks and couple block sums.
    Blocks(RunArgs),
    /// Evaluate rate functionals on paths, partitions, and events.
    Rate(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json / report.csv / manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (scheduling only; results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn kind(&self) -> TaskKind {
        match self {
            Command::Check(_) => TaskKind::Check,
            Command::Simulate(_) => TaskKind::Simulate,
            Command::Blocks(_) => TaskKind::Blocks,
            Command::Rate(_) => TaskKind::Rate,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Check(a) | Command::Simulate(a) | Command::Blocks(a) | Command::Rate(a) => a,
        }
    }
}

/// Run the CLI against an argv (including the program name); returns the
/// process exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap renders its own usage text; map everything to exit 2
            let _ = e.print();
            return 2;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let args = cli.command.args();
    let (config, warnings) = load_config(&args.config)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if config.task != cli.command.kind() {
        return Err(CliError::config(
            "/task",
            &format!(
                "config task `{}` does not match the `{}` subcommand",
                config.task,
                cli.command.kind()
            ),
        ));
    }
    let seed = args.seed.unwrap_or(config.seed);
    let threads = args.threads.or(config.threads).or_else(|| {
        std::env::var("MDPLAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let output = match threads {
        Some(t) if t > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?;
            pool.install(|| tasks::run_task(&config, seed))?
        }
        _ => tasks::run_task(&config, seed)?,
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(PathBuf::from));
    if let Some(dir) = out_dir {
        let config_value =
            serde_json::to_value(&config).map_err(|e| CliError::Output(e.to_string()))?;
        let manifest = RunManifest::start(&config_value, seed);
        let written = write_report(&dir, &output, manifest)?;
        for p in &written {
            eprintln!("wrote {}", p.display());
        }
    }
    if let Some(line) = &output.stdout_line {
        println!("{line}");
    }
    if !output.failed.is_empty() {
        println!(
            "{}",
            serde_json::json!({ "status": "fail", "failed_conditions": output.failed })
        );
        return Ok(1);
    }
    Ok(0)
}
