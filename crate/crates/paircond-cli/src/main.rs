mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Experiment, RunConfig};
use run::{Failure, Options};

/// Pair-condensate numerical experiments.
#[derive(Parser, Debug)]
#[command(name = "paircond", version)]
struct Cli {
    experiment: Experiment,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for the random restarts of the GP minimizer.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 lets the pool decide.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match try_main(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("paircond: {}", f.message());
            ExitCode::from(f.code() as u8)
        }
    }
}

fn try_main(cli: &Cli) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", cli.config.display())))?;
    let cfg = RunConfig::parse(&text)
        .and_then(|c| c.resolve(cli.experiment))
        .map_err(Failure::Validation)?;
    let test_mode = std::env::var("PAIRCOND_TEST_MODE").map_or(false, |v| v == "1");
    let threads = if test_mode { 1 } else { cli.threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Solver(format!("thread pool: {e}")))?;
    let opts = Options {
        seed: cli.seed,
        threads: rayon::current_num_threads(),
        config_dir: cli.config.parent().map(PathBuf::from).unwrap_or_default(),
    };
    let report = run::run(&cfg, &cli.out, &opts)?;
    println!("{}", serde_json::to_string_pretty(&report["results"]).expect("json"));
    Ok(())
}
