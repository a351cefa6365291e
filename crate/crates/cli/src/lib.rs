//! `cpdfs` command-line front end.
//!
//! Stages exchange data through files in the output directory:
//!
//! ```text
//! simulate   -> tags/NN_<mn>.ttag + tags/NN_<mn>.toml, config.toml
//! coincide   tags/ -> counts.csv
//! tomography counts.csv -> rho.csv
//! pipeline   all three in order
//! ```
//!
//! Every file the tool writes starts with
//! `# cpdfs <version> config_hash=<hash> seed=<seed>`, except binary tag
//! files, whose sidecar carries that line instead.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod report;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::report::Format;

#[derive(Debug, Parser)]
#[command(name = "cpdfs", version, about = "Counter-propagating DFS entanglement distribution toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (stage commands default to `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Closed-form visibilities and fidelity.
    Predict,
    /// Fock-space oracle against the closed forms over random parameters.
    Oracle,
    /// Simulated time tags, one file per analyzer setting.
    Simulate,
    /// Three-fold counts from tag files.
    Coincide {
        /// Directory of tag files; defaults to `<out>/tags`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Maximum-likelihood state from a counts file.
    Tomography {
        /// Counts file; defaults to `<out>/counts.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// DFS correction over random collective-noise channels.
    Protocol,
    /// Success rate against fibre transmittance.
    Scaling,
    /// simulate, coincide and tomography end to end.
    Pipeline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;

    pub fn config(message: String) -> Self {
        Self {
            code: Self::CONFIG,
            message,
        }
    }

    pub fn data(message: String) -> Self {
        Self {
            code: Self::DATA,
            message,
        }
    }

    pub fn io(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<cpdfs_core::Error> for CliError {
    fn from(e: cpdfs_core::Error) -> Self {
        use cpdfs_core::Error as E;
        let code = match &e {
            E::InvalidParameter(_) | E::WindowOverlap { .. } | E::Overflow(_) => Self::CONFIG,
            E::Io(_)
            | E::Format(_)
            | E::Unsorted(_)
            | E::Incomplete(_)
            | E::NoPeak { .. }
            | E::UnknownLabel(_) => Self::DATA,
            _ => Self::NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Runs one invocation and returns what goes to stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let ctx = Context::new(cfg, cli.seed, cli.format, cli.out.clone());
    let header = ctx.header();
    let report = match &cli.command {
        Command::Predict => commands::predict(&ctx)?,
        Command::Oracle => commands::oracle(&ctx)?,
        Command::Protocol => commands::protocol(&ctx)?,
        Command::Scaling => commands::scaling(&ctx)?,
        Command::Simulate => commands::simulate(&ctx, &ctx.out_dir())?,
        Command::Coincide { input } => {
            let dir = ctx.out_dir();
            let tags = input.clone().unwrap_or_else(|| dir.join(commands::TAGS_DIR));
            commands::coincide(&ctx, &tags, &dir)?
        }
        Command::Tomography { input } => {
            let dir = ctx.out_dir();
            let counts = input.clone().unwrap_or_else(|| dir.join(commands::COUNTS_FILE));
            commands::tomography(&ctx, &counts, &dir)?
        }
        Command::Pipeline => commands::pipeline(&ctx, &ctx.out_dir())?,
    };
    let writes_files = !matches!(
        cli.command,
        Command::Predict | Command::Oracle | Command::Protocol | Command::Scaling
    );
    let dir = if writes_files { Some(ctx.out_dir()) } else { ctx.out.clone() };
    report.emit(cli.format, &header, dir.as_deref())
}
