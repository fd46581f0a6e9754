use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bbca_harness::lemmas::Status;
use bbca_harness::{run, Config, ConfigError};
use clap::{Parser, Subcommand};
use serde::Serialize;

/// Deterministic BBCA-Chain simulator.
///
/// Exit status: 0 when every check passes, 1 on a violation, 2 on a usage
/// or configuration error.
#[derive(Parser)]
#[command(name = "bbca-sim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and check it.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed, e.g. to replay a campaign witness.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run `count` seeds starting at the scenario seed.
    Campaign {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate interleavings up to a depth.
    Explore {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        max_leaves: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit<T: Serialize>(report: &T, out: Option<&Path>) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    match out {
        Some(p) => std::fs::write(p, json + "\n"),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn status(s: Status) -> &'static str {
    match s {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Skipped => "skip",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
}

fn execute(cmd: Cmd) -> Result<bool, CliError> {
    match cmd {
        Cmd::Run { config, out, seed } => {
            let cfg = Config::load(&config)?;
            let r = run::run(&cfg, seed.unwrap_or(cfg.seed))?;
            emit(&r, out.as_deref())?;
            eprintln!(
                "seed {} stop {} at t={} digest {}",
                r.seed, r.stop, r.end_time, r.trace_digest
            );
            for v in &r.lemmas {
                eprintln!(
                    "  {:<5} {:<15} {}",
                    status(v.status),
                    v.lemma.name(),
                    v.detail
                );
            }
            Ok(r.passed)
        }
        Cmd::Campaign {
            config,
            count,
            jobs,
            out,
        } => {
            let cfg = Config::load(&config)?;
            let r = run::campaign(&cfg, count, jobs)?;
            emit(&r, out.as_deref())?;
            eprintln!(
                "{} runs from seed {}: {} failed, {} unfinished, digest {}",
                r.count,
                r.first_seed,
                r.failed_seeds.len(),
                r.unfinished_seeds.len(),
                r.campaign_digest
            );
            for t in &r.lemmas {
                eprintln!(
                    "  {:<15} pass {:>6} fail {:>6} skip {:>6}",
                    t.lemma.name(),
                    t.pass,
                    t.fail,
                    t.skipped
                );
            }
            Ok(r.passed)
        }
        Cmd::Explore {
            config,
            depth,
            max_leaves,
            out,
        } => {
            let cfg = Config::load(&config)?;
            let r = run::explore(&cfg, depth, max_leaves)?;
            emit(&r, out.as_deref())?;
            eprintln!(
                "{} depth {}: {} leaves{}",
                r.mode,
                r.depth,
                r.leaves,
                if r.partial { " (leaf cap hit)" } else { "" }
            );
            for p in &r.properties {
                eprintln!("  {:<5} {}", status(p.status), p.property);
            }
            Ok(r.passed)
        }
    }
}
