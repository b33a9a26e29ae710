//! Command-line surface, shared by the `foac` binary and in-process callers.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Result;
use crate::setup::{load_json, seed_override};
use crate::{cache_cmd, fig8, hover, random_bench, report, CliError};

#[derive(Parser)]
#[command(name = "foac", version, about = "Adaptive-penalty cached ADMM experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hover sweep over fixed penalties, adaptive update periods and exact recompute.
    Hover {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random controllable systems with random references.
    RandomBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Figure-eight tracking, optionally under wind.
    Fig8 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        wind: Option<Toggle>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline cache files.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum CacheAction {
    /// Build a cache with sensitivities from a problem file.
    Build {
        model_file: PathBuf,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe a cache file, or the cache a problem file would produce.
    Inspect {
        model_file: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn print_paths(paths: &report::OutputPaths) {
    println!("{}", paths.summary.display());
    println!("{}", paths.csv.display());
    println!("{}", paths.timing.display());
}

fn emit<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => report::write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?);
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = seed_override()?;
    match cli.command {
        Command::Hover { config, out } => {
            let mut cfg: hover::HoverConfig = load_json(&config)?;
            cfg.plant.resolve_paths(&config_dir(&config));
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = hover::run(&cfg)?;
            print_paths(&hover::write(&outcome, &out)?);
        }
        Command::RandomBench { config, out } => {
            let mut cfg: random_bench::RandomBenchConfig = load_json(&config)?;
            if let Some(s) = seed {
                cfg.spec.seed = s;
            }
            let outcome = random_bench::run(&cfg)?;
            print_paths(&random_bench::write(&outcome, &out)?);
        }
        Command::Fig8 {
            config,
            wind,
            seeds,
            out,
        } => {
            let mut cfg: fig8::Fig8Config = load_json(&config)?;
            cfg.plant.resolve_paths(&config_dir(&config));
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = wind {
                cfg.wind = matches!(w, Toggle::On);
            }
            if let Some(k) = seeds {
                cfg.seeds = k;
            }
            let outcome = fig8::run(&cfg)?;
            print_paths(&fig8::write(&outcome, &out)?);
        }
        Command::Cache { action } => match action {
            CacheAction::Build { model_file, rho, out } => {
                let info = cache_cmd::build(&model_file, rho, &out)?;
                emit(&info, None)?;
            }
            CacheAction::Inspect { model_file, rho, out } => {
                let info = cache_cmd::inspect(&model_file, rho)?;
                emit(&info, out.as_deref())?;
            }
        },
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command. Usage
/// errors are reported as validation failures.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Validation(e.to_string()))?;
    run(cli)
}
