use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecots_cli::{commands, CliError, Overrides, RunConfig};

/// Early classification in open time series: data, training, sweeps and reports
#[derive(Parser, Debug)]
#[command(name = "ecots", version, about)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for the split, the held-out draw and the generator
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (0 = one per core)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override any config field, e.g. --set data.synthetic.num_series=40
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset
    Generate,
    /// Convert the public predictive-maintenance CSV files
    Ingest,
    /// Train one classifier per horizon
    Train,
    /// Tune and evaluate every (method, alpha, cost matrix) cell
    Sweep,
    /// Tables and SVG charts from the sweep results
    Report,
    /// Print the effective configuration as TOML
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides { set: cli.set, seed: cli.seed, out: cli.out, jobs: cli.jobs };
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate => commands::generate(&config),
        Command::Ingest => commands::ingest(&config),
        Command::Train => commands::train(&config),
        Command::Sweep => commands::sweep(&config),
        Command::Report => {
            let outcome = commands::report(&config)?;
            if outcome.missing > 0 {
                return Err(CliError::Missing(format!(
                    "{} missing entries, listed in {}",
                    outcome.missing,
                    config.report_dir().join("gaps.csv").display()
                )));
            }
            Ok(())
        }
        Command::Config => {
            print!("{}", config.to_toml()?);
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
