use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use traffic_risk::experiment::{
    load_config, run_experiment, sample_cells, validate_config, with_threads, write_library, CellSamples, ExperimentConfig,
    Prepared,
};

/// Traffic-accident loss simulation and insurance pricing.
#[derive(Debug, Parser)]
#[command(name = "traffic-risk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the scenario library and pre-sample speeds; writes scenario, detector and hazard CSVs.
    Simulate(Common),
    /// Draw annual losses for every configured cell; writes loss CSVs.
    Sample(Common),
    /// Full run: losses, risk functionals and contract prices.
    Report(Common),
    /// Check a configuration and list every problem.
    Validate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding `sampling.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.sampling.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let started = Instant::now();
    match cli.command {
        Command::Validate(c) => {
            let config = c.config()?;
            let diagnostics = validate_config(&config);
            if diagnostics.is_empty() {
                println!("configuration is valid");
                return Ok(ExitCode::SUCCESS);
            }
            for d in &diagnostics {
                println!("{d}");
            }
            return Ok(ExitCode::FAILURE);
        }
        Command::Simulate(c) => {
            let config = c.config()?;
            let prepared = with_threads(c.threads, || Prepared::new(config.plan()?))?;
            write_library(&prepared, &config.output.dir)
                .with_context(|| format!("writing to {}", config.output.dir.display()))?;
        }
        Command::Sample(c) => {
            let config = c.config()?;
            let (prepared, cells) = with_threads(c.threads, || {
                let prepared = Prepared::new(config.plan()?)?;
                let cells = sample_cells(&prepared)?;
                Ok((prepared, cells))
            })?;
            CellSamples::write(&prepared, &cells, &config.output.dir)
                .with_context(|| format!("writing to {}", config.output.dir.display()))?;
        }
        Command::Report(c) => {
            let config = c.config()?;
            let report = run_experiment(&config, c.threads)?;
            for cell in &report.cells {
                println!(
                    "{:<28} E[L] = {:>12.3}  normalized = {:>10.3}  Wald = {:>12.3}",
                    cell.label, cell.raw.mean, cell.normalized.mean, cell.wald_mean
                );
            }
        }
    }
    eprintln!("finished in {:.2?}", started.elapsed());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
