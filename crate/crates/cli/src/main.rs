use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mflab_cli::config::{ModelName, RunConfig};
use mflab_cli::{error_status, run, Status, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "mflab", version, about = "Mean-field lattice checks with reproducible artifacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Green-function identities and exponents.
    Green(Common),
    /// Effective-walk regularity and anti-concentration.
    Rw(Common),
    /// Self-avoiding walk series checks.
    Saw(Common),
    /// Percolation oracle checks.
    Perc(Common),
    /// Ising oracle checks.
    Ising(Common),
    /// Lattice-tree series checks.
    Lt(Common),
    /// Observables sweep of one model.
    Observe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<ModelName>,
    },
    /// Any set of suites; `all` runs every one.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated suite names.
        #[arg(long, value_delimiter = ',')]
        suite: Option<Vec<String>>,
        #[arg(long)]
        model: Option<ModelName>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<Status> {
    let fixed = |common: Common, suites: &[&str]| -> Result<(RunConfig, Common)> {
        let mut cfg = load(&common)?;
        cfg.suite = suites.iter().map(|s| s.to_string()).collect();
        Ok((cfg, common))
    };
    let (cfg, common) = match cli.command {
        Command::Green(c) => fixed(c, &["green-identities", "green-exponents"])?,
        Command::Rw(c) => fixed(c, &["rw"])?,
        Command::Saw(c) => fixed(c, &["saw"])?,
        Command::Perc(c) => fixed(c, &["perc"])?,
        Command::Ising(c) => fixed(c, &["ising"])?,
        Command::Lt(c) => fixed(c, &["lt"])?,
        Command::Observe { common, model } => {
            let (mut cfg, common) = fixed(common, &["observe"])?;
            if let Some(m) = model {
                cfg.model.name = m;
            }
            (cfg, common)
        }
        Command::Verify { common, suite, model } => {
            let mut cfg = load(&common)?;
            if let Some(s) = suite {
                cfg.suite = s;
            }
            if let Some(m) = model {
                cfg.model.name = m;
            }
            (cfg, common)
        }
    };
    let outcome = run(&cfg, common.workers)?;
    for (id, r) in &outcome.reports {
        println!("{id}: {}", r.summary_line());
    }
    for (suite, e) in &outcome.failures {
        eprintln!("suite {suite} failed: {e}");
    }
    println!(
        "{} files, MANIFEST at {}",
        outcome.manifest.entries.len(),
        cfg.out.join(mflab_cli::artifacts::MANIFEST_NAME).display()
    );
    Ok(outcome.status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match execute(cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            error_status(&e)
        }
    };
    ExitCode::from(status as u8)
}
