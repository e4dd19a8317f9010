//! `agesis`: config-driven front end for the infection-age SIS model.
//!
//! Exit codes: 0 on success, 2 for config errors, 3 for numerical failures.

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Documents, Failure};

#[derive(Parser, Debug)]
#[command(name = "agesis", version, about = "Infection-age SIS model: equilibria, spectra, Hopf points, simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (`key = value` lines, `#` comments).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output file; overrides `output` in the config. Defaults to stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Worker threads for parallel batches (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    jobs: usize,

    /// Keep every eigenvalue instead of the leading ones.
    #[arg(long, global = true)]
    full_spectrum: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Reproduction numbers, growth rate, equilibria and system size.
    Info,
    /// Trajectory from a constant history, with its attractor.
    Simulate,
    /// Eigenvalues at the endemic (or disease-free) equilibrium.
    Eigs,
    /// Endemic branch over `sweep`, with its bifurcations.
    Continue,
    /// Hopf curve: `sweep` value of the crossing at each `grid` value.
    Boundary,
    /// Long-run attractor from each `i0`.
    Bistability,
}

fn run(cli: &Cli) -> Result<Documents, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config <path> is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("reading {}: {e}", path.display())))?;
    let config = config::parse(&text)?;
    agesis::parallel::with_jobs(cli.jobs, || match cli.command {
        Command::Info => commands::info(&config),
        Command::Simulate => commands::simulate(&config),
        Command::Eigs => commands::eigs(&config, cli.full_spectrum),
        Command::Continue => commands::continuation(&config, cli.full_spectrum),
        Command::Boundary => commands::boundary(&config),
        Command::Bistability => commands::bistability(&config),
    })
    .and_then(|docs| {
        let out = cli.out.clone().or(config.output.clone());
        write(out.as_deref(), &docs)?;
        Ok(docs)
    })
}

/// Companion path `dir/stem.name.csv` for an output `dir/stem.ext`.
fn companion(main: &Path, name: &str) -> PathBuf {
    let stem = main.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    main.with_file_name(format!("{stem}.{name}.csv"))
}

fn write(out: Option<&Path>, docs: &Documents) -> Result<(), Failure> {
    let io = |p: &Path, e: std::io::Error| Failure::Config(format!("writing {}: {e}", p.display()));
    match out {
        Some(path) => {
            fs::write(path, &docs.main).map_err(|e| io(path, e))?;
            for (name, text) in &docs.extra {
                let p = companion(path, name);
                fs::write(&p, text).map_err(|e| io(&p, e))?;
            }
        }
        None => {
            print!("{}", docs.main);
            for (_, text) in &docs.extra {
                print!("\n{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(docs) => {
            for w in &docs.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
