use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use entry_lab::{run, Command, ExperimentConfig, EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK};

/// Market-entry learning experiments: agent simulation, kinetic PDE and
/// their diagnostics.
#[derive(Debug, Parser)]
#[command(name = "entry-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `abm.base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 = one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_ERROR
        }
    };
    ExitCode::from(code as u8)
}

fn execute(cli: &Cli) -> Result<bool, String> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.abm.base_seed = seed;
    }
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let outcome = run(cli.command, &cfg, &out).map_err(|e| e.to_string())?;
    print!("{}", outcome.report.to_text());
    Ok(outcome.passed)
}
