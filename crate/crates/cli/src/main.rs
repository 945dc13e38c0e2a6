//! Command-line front end: loads an experiment config, runs it, writes
//! results.csv and run.json, and optionally asserts the mode's target
//! property. Exit code 2 flags a bad config, 1 a failed run or assertion.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mlp_pde_core::harness::{assert_results, load_config, run};
use mlp_pde_core::problem::BUILTIN_IDS;

#[derive(Parser)]
#[command(name = "mlp-pde", version, about = "Multilevel Picard PDE experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML or JSON config file.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread count (defaults to the machine's cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Checks the mode's target property after the run and fails the
        /// process if it does not hold.
        #[arg(long)]
        assert: bool,
        /// Directory for results.csv and run.json.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// List the built-in problem ids.
    Problems,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Problems => {
            for id in BUILTIN_IDS {
                println!("{id}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, seed, threads, assert, out_dir } => {
            let mut cfg = match load_config(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let output = match run(&cfg, &out_dir, threads) {
                Ok(output) => output,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            for r in &output.records {
                let se = r.std_err.map(|s| format!(" se={s:.3e}")).unwrap_or_default();
                println!(
                    "{} {} d={} n={} grid={} point={} nu={} {}={:.6e}{}",
                    r.mode, r.problem, r.dim, r.level, r.grid, r.point, r.nu, r.metric, r.value, se
                );
            }
            println!(
                "wrote {} records to {} (sidecar {})",
                output.records.len(),
                output.csv_path.display(),
                output.sidecar_path.display()
            );
            if assert {
                if let Err(e) = assert_results(&cfg, &output.records) {
                    eprintln!("assertion failed: {e}");
                    return ExitCode::from(1);
                }
                println!("assertion passed for mode {}", cfg.mode.tag());
            }
            ExitCode::SUCCESS
        }
    }
}
