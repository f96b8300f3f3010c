use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedchaos::config::RunConfig;
use fedchaos::federation::ModeKind;
use fedchaos::{harness, Error, Result};

#[derive(Parser)]
#[command(
    name = "fedchaos",
    version,
    about = "Federated learning simulator with DP-SGD and chaotic-cipher privacy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Partition and split the dataset, writing one manifest per seed.
    Partition(RunArgs),
    /// Train every configured mode for every seed and write result tables.
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// Restrict to these modes (plain, dp, chaos); repeat or comma-separate.
        #[arg(long, value_delimiter = ',')]
        mode: Vec<ModeKind>,
    },
    /// Print mean ± std across the per-seed tables found in a result directory.
    Report {
        /// Result directory written by `run`.
        dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("FEDCHAOS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("FEDCHAOS_THREADS: expected a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("FEDCHAOS_THREADS: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

struct Resolved {
    cfg: RunConfig,
    seeds: Vec<u64>,
    out: PathBuf,
}

fn resolve(args: &RunArgs) -> Result<Resolved> {
    let cfg = RunConfig::load(&args.config)?;
    let seeds = match args.seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))?;
    Ok(Resolved { cfg, seeds, out })
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Partition(args) => {
            let r = resolve(&args)?;
            print!("{}", harness::cmd_partition(&r.cfg, &r.seeds, &r.out)?);
        }
        Command::Run { args, mode } => {
            let r = resolve(&args)?;
            let modes: Vec<ModeKind> = if mode.is_empty() {
                r.cfg.modes.clone()
            } else {
                r.cfg.modes.iter().copied().filter(|m| mode.contains(m)).collect()
            };
            if modes.is_empty() {
                return Err(Error::Config("--mode selects none of the configured modes".into()));
            }
            let outcome = harness::cmd_run(&r.cfg, &r.seeds, &modes, &r.out)?;
            print!("{}", outcome.mean.render());
            eprintln!("results written to {}", r.out.display());
        }
        Command::Report { dir, out } => {
            let dir = dir
                .or(out)
                .ok_or_else(|| Error::Config("report needs a result directory".into()))?;
            print!("{}", harness::cmd_report(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
