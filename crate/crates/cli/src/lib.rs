//! Command-line driver: `train`, `price`, `compare` and `emit-reference`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Method, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tdgf", version, about = "American basket put pricing with neural PDE solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Zero wall-clock columns so repeated runs are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write checkpoints, telemetry and a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Evaluate trained checkpoints on the moneyness grid.
    Price {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
        /// Checkpoint directory (default: <out>/checkpoints/<method>).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Join TDGF, DGM and Monte Carlo surfaces and report deviations.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tdgf: PathBuf,
        #[arg(long)]
        dgm: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Least-squares Monte Carlo (and binomial, for one asset) reference prices.
    EmitReference {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

/// Run one parsed command, returning a short summary for stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train { common, method } => {
            let mut cfg = load(&common)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            let m = commands::cmd_train(&cfg, common.deterministic)?;
            Ok(format!(
                "trained {} in {:.1}s; {} files under {}",
                cfg.method.as_str(),
                m.wall_clock_seconds,
                m.files.len(),
                cfg.out.display()
            ))
        }
        Command::Price {
            common,
            method,
            checkpoints,
        } => {
            let mut cfg = load(&common)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            let dir = checkpoints.unwrap_or_else(|| commands::checkpoint_dir(&cfg.out, cfg.method));
            let rows = commands::cmd_price(&cfg, cfg.method, &dir, common.deterministic)?;
            Ok(format!(
                "wrote {} prices to {}",
                rows.len(),
                commands::surface_path(&cfg.out, cfg.method).display()
            ))
        }
        Command::Compare {
            common,
            tdgf,
            dgm,
            reference,
        } => {
            let cfg = load(&common)?;
            let report = commands::cmd_compare(&cfg, &tdgf, &dgm, &reference, common.deterministic)?;
            let mut s = format!("{} grid points\n", report.points);
            for p in &report.pairs {
                s += &format!("{:>8} vs {:<8} max {:.3e} mean {:.3e}\n", p.a, p.b, p.max_abs, p.mean_abs);
            }
            Ok(s.trim_end().to_string())
        }
        Command::EmitReference { common } => {
            let cfg = load(&common)?;
            let rows = commands::cmd_emit_reference(&cfg, common.deterministic)?;
            Ok(format!(
                "wrote {} reference prices to {}",
                rows.len(),
                commands::reference_path(&cfg.out).display()
            ))
        }
    }
}
