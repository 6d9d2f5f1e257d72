use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use saddlekit::bench::{emit_report, run_experiment, ExperimentConfig, ExperimentRegistry, Overrides};
use saddlekit::{Error, Result};

/// Run one saddle-search benchmark and write its CSV and JSON reports.
#[derive(Debug, Parser)]
#[command(name = "saddlekit", version)]
struct Cli {
    /// neb2d, sweep2d, dimer2d, wvac, rate2d or projdemo.
    experiment: String,
    /// Configuration file (`key = value` lines and `[section]` headers).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed_offset: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Worker threads; falls back to SADDLEKIT_THREADS, then all cores.
    #[arg(long, env = "SADDLEKIT_THREADS")]
    threads: Option<usize>,
    /// Potential file for the vacancy benchmark.
    #[arg(long)]
    setfl: Option<PathBuf>,
    /// Comma-separated variant names.
    #[arg(long = "variant", value_delimiter = ',')]
    variants: Option<Vec<String>>,
}

fn run(cli: Cli) -> Result<()> {
    let registry = ExperimentRegistry::builtin();
    let mut cfg = ExperimentConfig::from_file(&cli.config, Some(&cli.experiment), |n| registry.defaults(n))?;
    cfg.apply(&Overrides {
        seeds: cli.seeds,
        seed_offset: cli.seed_offset,
        iterations: cli.iterations,
        variants: cli.variants,
        setfl: cli.setfl,
    })?;
    let report = run_experiment(&registry, &cfg, cli.threads)?;
    let files = emit_report(&report, &cli.out)?;
    for p in [&files.seeds, &files.trajectory, &files.summary, &files.run_info] {
        println!("{}", p.display());
    }
    eprintln!("{} finished in {:.1} s", cfg.experiment, report.wall_time);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
