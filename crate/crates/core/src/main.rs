use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dislab::config::{self, ExperimentConfig};
use dislab::selftest;

/// Entropy experiments against arbitrary reference measures.
#[derive(Parser)]
#[command(name = "dislab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Suppress the summary.
        #[arg(short, long)]
        quiet: bool,
    },
    /// Run the built-in check battery.
    Selftest {
        /// Directory for the artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 20240601)]
        seed: u64,
    },
    /// Print the JSON Schema of the experiment config.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, quiet } => run(&config, quiet),
        Command::Selftest { out, seed } => run_selftest(out, seed),
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&config::schema()).expect("schema"));
            0
        }
    };
    ExitCode::from(code as u8)
}

fn run(path: &PathBuf, quiet: bool) -> i32 {
    let result = ExperimentConfig::from_file(path).and_then(|c| {
        let outcome = c.run()?;
        c.write_outputs(&outcome)?;
        Ok(outcome)
    });
    match result {
        Ok(outcome) => {
            if !quiet {
                for line in &outcome.summary {
                    println!("{line}");
                }
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_selftest(out: Option<PathBuf>, seed: u64) -> i32 {
    let report = selftest::run(seed, out.as_deref(), |c| {
        println!(
            "{:<4} {:<24} {:>9.3} s",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.elapsed.as_secs_f64()
        );
    });
    match report {
        Ok(r) if r.passed => 0,
        Ok(r) => {
            for c in r.checks.iter().filter(|c| !c.passed) {
                eprintln!("{}: {}", c.name, c.detail);
            }
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}
