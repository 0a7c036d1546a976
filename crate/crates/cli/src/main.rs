//! `bnews` — simulate, scan, warn and run the Koper case study.
//!
//! Exit status: 0 success, 1 computation failure, 2 input/output or data
//! format error, 3 usage or configuration error, 10 early warning raised.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use commands::Ctx;
use config::RunConfig;
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "bnews", version, about = "Bifurcations and early warnings for random maps with bounded noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration, or any output file of a previous run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "BNEWS_THREADS")]
    threads: Option<usize>,
    /// Koper: repeat the deterministic fixed-point computation at dt/2.
    #[arg(long, global = true)]
    dt_check: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate a random map and write the time series.
    Simulate,
    /// Scan a set-valued family for discontinuous bifurcations.
    Scan,
    /// Early-warning scan; exits with 10 when the flag is raised.
    Warn,
    /// Koper return maps, invariant-set sweep and boundary derivative.
    Koper,
}

fn run(cli: Cli) -> Result<i32, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.apply_seed(s);
    }
    config.validate()?;
    let out = cli.out.ok_or_else(|| CliError::Usage("--out <dir> is required".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let ctx = Ctx { config: &config, out, dt_check: cli.dt_check };
    let base = cli.config.as_deref().and_then(|p| p.parent()).map(|p| p.to_path_buf());
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Scan => commands::cmd_scan(&ctx),
        Command::Warn => commands::cmd_warn(&ctx, base.as_deref()),
        Command::Koper => commands::cmd_koper(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("bnews: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
