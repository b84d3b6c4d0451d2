use clap::Parser;
use gaim::experiment::{run_experiment, selftest, ExperimentConfig, Suite};
use std::path::PathBuf;
use std::process::ExitCode;

/// Fit generalized additive index models on synthetic experiments.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// JSON experiment configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for trials.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record error traces every N iterations (0 disables).
    #[arg(long)]
    trace_every: Option<usize>,
    /// Leave wall-clock times out of the per-trial CSV.
    #[arg(long)]
    no_timing: bool,
    /// Run the built-in invariant checks and exit.
    #[arg(long)]
    selftest: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.selftest {
        let report = selftest();
        print!("{report}");
        return if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE };
    }
    let mut cfg = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.suite {
        cfg.suite = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if let Some(t) = cli.trace_every {
        cfg.trace_every = t;
    }
    if cli.no_timing {
        cfg.record_wall_clock = false;
    }
    match run_experiment(&cfg) {
        Ok(report) => {
            print!("{}", gaim::experiment::run::format_table(&report.settings, &report.summary));
            println!("outputs written to {}", report.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
