use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use eqtri::sim::{InitMode, SolverId};
use eqtri_cli::commands::{self, Fault, SolveArgs};
use eqtri_cli::config::{load, Loaded};
use eqtri_cli::output::{write_files, BOUNDS_FILE};
use eqtri_cli::WORKERS_ENV;

#[derive(Parser)]
#[command(
    name = "eqtri",
    version,
    about = "Equilateral-triangle manifold localization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the geometry property suite and print a pass/fail table.
    Validate {
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Run one trial and print it as a CSV row.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the highest SNR on the config grid.
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
        /// Defaults to the first solver listed in the config.
        #[arg(long)]
        solver: Option<SolverId>,
        #[arg(long)]
        init: Option<InitMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Monte-Carlo sweep over the SNR grid; writes every CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// CRB and constrained CRB curves over the SNR grid.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    ProjectionSign,
}

fn init_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{WORKERS_ENV} must be a positive integer, got `{raw}`"))?;
    anyhow::ensure!(
        n > 0,
        "{WORKERS_ENV} must be a positive integer, got `{raw}`"
    );
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot start the worker pool")
}

fn note_kappa(loaded: &Loaded) {
    if loaded.kappa_calibrated {
        eprintln!("calibrated direct.kappa = {:.8e}", loaded.scenario.kappa);
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate {
            points,
            seed,
            inject_fault,
        } => {
            let fault = inject_fault.map(|FaultArg::ProjectionSign| Fault::ProjectionSign);
            let report = commands::validate(points, seed, fault);
            print!("{}", report.render());
            return Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
        Command::Solve {
            config,
            snr,
            solver,
            init,
            seed,
            trial,
        } => {
            let loaded = load(&config, seed, None)?;
            note_kappa(&loaded);
            let args = SolveArgs {
                snr_db: snr,
                solver,
                init,
                trial,
            };
            print!("{}", commands::solve(&loaded, &args)?.as_str());
        }
        Command::Sweep {
            config,
            seed,
            trials,
            out_dir,
        } => {
            init_workers()?;
            let loaded = load(&config, seed, trials)?;
            note_kappa(&loaded);
            let dir = out_dir.unwrap_or_else(|| loaded.config.out_dir.clone());
            let out = commands::sweep(&loaded)?;
            write_files(&dir, &out.files)?;
            for (name, _) in &out.files {
                println!("{}", dir.join(name).display());
            }
        }
        Command::Bounds { config, out_dir } => {
            let loaded = load(&config, None, None)?;
            let dir = out_dir.unwrap_or_else(|| loaded.config.out_dir.clone());
            let table = commands::bounds(&loaded)?;
            print!("{}", table.as_str());
            write_files(&dir, &[(BOUNDS_FILE.to_owned(), table)])?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
