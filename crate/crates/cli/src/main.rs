mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "dfcn", version, about = "Bifurcation diagrams via deflated continuation: \
spectral-element offline phase, POD reduced basis, online reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (artifacts of one run live together).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Parallelism across independent offline diagrams / online grid lines.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overrides the solver tolerance from the config.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Overrides the perturbation seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full-order deflated continuation: snapshots + offline diagram.
    Offline {
        /// Also write (x, y, u, v, p) field CSVs of each branch's last state.
        #[arg(long)]
        dump_fields: bool,
    },
    /// Reduced-basis construction from the stored snapshots.
    Pod,
    /// Online deflated continuation on the reduced model.
    Online {
        /// Reproject sampled online solutions, re-solve full order and
        /// record the relative error column.
        #[arg(long)]
        verify_against_full: bool,
    },
    /// Built-in verification suite (prints PASS/FAIL lines).
    Verify,
    /// Render a diagram CSV as SVG.
    Plot {
        /// Diagram CSV (defaults to <out>/diagram.csv).
        #[arg(long)]
        input: Option<PathBuf>,
        /// SVG file to write (defaults to <out>/diagram.svg).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Parameter component on the x axis.
        #[arg(long, default_value_t = 0)]
        x_component: usize,
    },
}

/// Exit code 2: configuration/usage problems; 1: runtime failures.
struct Usage(anyhow::Error);

fn load_config(cli: &Cli) -> Result<RunConfig, Usage> {
    let path = cli.config.as_ref().ok_or_else(|| {
        Usage(anyhow::anyhow!("--config is required for this subcommand"))
    })?;
    let mut config = RunConfig::load(path).map_err(Usage)?;
    if let Some(t) = cli.tolerance {
        config.tolerance = t;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate().map_err(Usage)?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), (anyhow::Error, u8)> {
    let usage = |u: Usage| (u.0, 2u8);
    let runtime = |e: anyhow::Error| (e, 1u8);
    match &cli.command {
        Command::Offline { dump_fields } => {
            let config = load_config(&cli).map_err(usage)?;
            let out = commands::OutPaths::new(&cli.out).map_err(runtime)?;
            commands::cmd_offline(&config, &out, cli.jobs, *dump_fields).map_err(runtime)
        }
        Command::Pod => {
            let config = load_config(&cli).map_err(usage)?;
            let out = commands::OutPaths::new(&cli.out).map_err(runtime)?;
            commands::cmd_pod(&config, &out).map_err(runtime)
        }
        Command::Online { verify_against_full } => {
            let config = load_config(&cli).map_err(usage)?;
            let out = commands::OutPaths::new(&cli.out).map_err(runtime)?;
            commands::cmd_online(&config, &out, cli.jobs, *verify_against_full).map_err(runtime)
        }
        Command::Verify => {
            let config = load_config(&cli).map_err(usage)?;
            let failures = commands::cmd_verify(&config).map_err(runtime)?;
            if failures > 0 {
                return Err(runtime(anyhow::anyhow!("{failures} verification check(s) failed")));
            }
            Ok(())
        }
        Command::Plot { input, output, x_component } => {
            let input = input.clone().unwrap_or_else(|| cli.out.join("diagram.csv"));
            let output = output.clone().unwrap_or_else(|| cli.out.join("diagram.svg"));
            commands::cmd_plot(&input, &output, *x_component)
                .context("plot failed")
                .map_err(runtime)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((err, code)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
