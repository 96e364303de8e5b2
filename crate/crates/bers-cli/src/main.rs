mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Context, Failure, Quantity};
use config::{ConfigError, Format, RunConfig};

/// Sewing-based Bers quasiforms, classical differentials and variational
/// checks on Schottky surfaces.
#[derive(Parser)]
#[command(name = "bers", version)]
struct Cli {
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Overrides `truncation.modes`.
    #[arg(long, global = true, value_name = "M")]
    modes: Option<usize>,
    /// Overrides `truncation.word_len`.
    #[arg(long, global = true, value_name = "K")]
    words: Option<usize>,
    /// Engine cache directory. Defaults to `.bers-cache` beside `--out`.
    #[arg(long, global = true, value_name = "DIR")]
    cache: Option<PathBuf>,
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Checks that the Schottky disks are disjoint and correctly paired.
    Validate,
    /// Tabulates a quantity at the configured points or on a grid.
    Eval {
        #[arg(value_enum)]
        what: Quantity,
        /// Grid of evaluation points, "x0,x1,nx;y0,y1,ny".
        #[arg(long, value_name = "SPEC", allow_hyphen_values = true)]
        seed_grid: Option<String>,
    },
    /// Period matrix with symmetry and normalization residuals.
    PeriodMatrix,
    /// Log-determinant by the matrix and product routes.
    Zeta,
    /// Runs the variational identity suite.
    Check {
        /// Identities to run (default: all).
        #[arg(long = "check", value_delimiter = ',', value_name = "NAME")]
        names: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let path = cli
        .config
        .ok_or_else(|| Failure::usage("--config is required"))?;
    let mut cfg = RunConfig::load(&path).map_err(|e| match e {
        ConfigError::Parse(m) => Failure::usage(format!("parse error: {m}")),
        ConfigError::Invalid(m) => Failure {
            code: commands::EXIT_INVALID,
            message: m,
        },
    })?;
    if let Some(m) = cli.modes {
        cfg.truncation.modes = m;
    }
    if let Some(k) = cli.words {
        cfg.truncation.word_len = k;
    }
    if cfg.truncation.modes == 0 {
        return Err(Failure::usage("--modes must be positive"));
    }
    let out = cli
        .out
        .or_else(|| cfg.output.path.as_ref().map(PathBuf::from));
    let cache = match (cli.no_cache, cli.cache, &out) {
        (true, _, _) => None,
        (false, Some(dir), _) => Some(dir),
        (false, None, Some(o)) => Some(commands::cache_beside(o)),
        (false, None, None) => None,
    };
    let ctx = Context {
        format: cli.format.unwrap_or(cfg.output.format),
        cfg,
        out,
        cache,
    };
    match cli.command {
        Command::Validate => commands::validate(&ctx),
        Command::Eval { what, seed_grid } => commands::eval(&ctx, what, seed_grid.as_deref()),
        Command::PeriodMatrix => commands::period_matrix(&ctx),
        Command::Zeta => commands::zeta(&ctx),
        Command::Check { names } => commands::check(&ctx, &names),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                commands::EXIT_USAGE as u8
            } else {
                0
            });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
