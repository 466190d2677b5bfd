//! `contraction` command line: reproducible experiments over the
//! contraction toolkit.
//!
//! Usage: `contraction <subcommand> --config <path> [--out <dir>]
//! [--seed <u64>] [--threads <n>]`. Identical config and seed produce
//! byte-identical artifacts for any thread count; exit code 2 flags
//! configuration errors, 3 numerical non-convergence (partial artifacts are
//! kept on disk).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use contraction_cli::config::RawConfig;
use contraction_cli::ops;
use contraction_cli::output;

#[derive(Parser, Debug)]
#[command(
    name = "contraction",
    version,
    about = "Lp Wasserstein contraction toolkit for diffusion semigroups"
)]
struct Cli {
    /// Operation to run; must match the config's operation block.
    #[arg(value_parser = ops::KNOWN_OPS.to_vec())]
    subcommand: String,
    /// Path to the INI experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: output.dir from the config, or `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (fallback: TOOL_THREADS env var, then all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();

    let threads = cli.threads.or_else(|| {
        std::env::var("TOOL_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }

    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let raw = match RawConfig::parse(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    // the subcommand must agree with the config's operation block
    if let Some((op, _)) = raw.get("operation", "op") {
        if op != &cli.subcommand {
            eprintln!(
                "error: subcommand `{}` does not match operation.op = `{op}`",
                cli.subcommand
            );
            return ExitCode::from(2);
        }
    }

    let out_dir = cli
        .out
        .clone()
        .or_else(|| raw.get("output", "dir").map(|(v, _)| PathBuf::from(v)))
        .unwrap_or_else(|| PathBuf::from("out"));

    match ops::run(&raw, &out_dir, cli.seed) {
        Ok(resolved) => {
            let manifest = output::manifest(&resolved, started.elapsed().as_millis());
            if let Err(e) = output::write_artifact(&out_dir, "manifest.json", &manifest) {
                eprintln!("error: {e:#}");
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
