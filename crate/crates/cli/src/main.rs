use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use hierls_cli::commands;
use hierls_cli::error::{CliError, CliResult};
use hierls_cli::manifest::Loaded;

#[derive(Parser)]
#[command(
    name = "hierls",
    about = "Hierarchical Bayesian level set inversion",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw (or import) the true field and write its phase grid.
    MakeTruth(StageArgs),
    /// Push the truth through the forward map and add observation noise.
    MakeData(StageArgs),
    /// Run one posterior chain and persist trace, snapshots, and summary.
    Sample(StageArgs),
    /// Merge finished runs and export density histograms.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Manifest describing the experiment.
    #[arg(long)]
    config: PathBuf,
    /// Overrides this stage's seed from the manifest.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides this stage's output directory from the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Run directories, each holding a stats.json.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Where the merged outputs go.
    #[arg(long, default_value = "summary")]
    out: PathBuf,
}

/// HIERLS_NUM_THREADS caps the worker pool used for grid transforms; unset
/// means one worker per core.
fn apply_thread_cap() -> CliResult<()> {
    let Some(raw) = std::env::var_os("HIERLS_NUM_THREADS") else {
        return Ok(());
    };
    let text = raw.to_str().unwrap_or("");
    let n: usize = text.parse().map_err(|_| {
        CliError::config(format!(
            "HIERLS_NUM_THREADS must be a positive integer, got {text:?}"
        ))
    })?;
    if n == 0 {
        return Err(CliError::config(
            "HIERLS_NUM_THREADS must be a positive integer, got 0",
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("thread pool setup failed: {e}")))
}

fn run() -> CliResult<()> {
    apply_thread_cap()?;
    match Cli::parse().cmd {
        Cmd::MakeTruth(a) => {
            let loaded = Loaded::read(&a.config)?;
            commands::make_truth(&loaded, a.seed, a.out.as_deref())
        }
        Cmd::MakeData(a) => {
            let loaded = Loaded::read(&a.config)?;
            commands::make_data(&loaded, a.seed, a.out.as_deref())
        }
        Cmd::Sample(a) => {
            let loaded = Loaded::read(&a.config)?;
            commands::sample(&loaded, a.seed, a.out.as_deref())
        }
        Cmd::Summarize(a) => commands::summarize(&a.runs, &a.out),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
