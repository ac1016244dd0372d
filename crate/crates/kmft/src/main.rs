use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kmft::config::{self, Resolved};
use kmft::runners::run;
use kmft::sweep;

const EXIT_RUN: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "kmft", version, about = "Kernel mean-field theory experiments")]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. --set hyper.kappa=0.1 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (default: output_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved config as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Run once per value of a scalar config field and merge the metrics.
    Sweep {
        config: PathBuf,
        /// Dotted config key, or one of lambda, N, kappa, T.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Maximum number of concurrent runs.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn load(path: &Path, set: &[String]) -> Result<Resolved, ExitCode> {
    config::load(path, set).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = !cli.quiet;
    let result = match cli.command {
        Command::Run { config, set, out, print_config } => load(&config, &set).map(|r| {
            if print_config {
                print!("{}", r.config.to_toml());
                return ExitCode::SUCCESS;
            }
            let outcome = run(&r.config, out.as_deref(), verbose);
            match outcome.error {
                None => {
                    println!("{}", outcome.dir.display());
                    ExitCode::SUCCESS
                }
                Some(e) => {
                    eprintln!("error: {e} (partial results in {})", outcome.dir.display());
                    ExitCode::from(EXIT_RUN)
                }
            }
        }),
        Command::Sweep { config, axis, values, parallel, set, out } => load(&config, &set).and_then(|r| {
            let planned = sweep::plan(&r, &axis, &values).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            })?;
            let out = out.unwrap_or_else(|| r.config.output_dir.clone());
            match sweep::sweep(planned, &axis, &out, parallel, verbose) {
                Err(e) => {
                    eprintln!("error: {e}");
                    Ok(ExitCode::from(EXIT_RUN))
                }
                Ok(o) => {
                    println!("{}", o.merged.display());
                    if o.failures() > 0 {
                        eprintln!("error: {} of {} runs failed", o.failures(), o.points.len());
                        Ok(ExitCode::from(EXIT_RUN))
                    } else {
                        Ok(ExitCode::SUCCESS)
                    }
                }
            }
        }),
        Command::Validate { config, set } => load(&config, &set).map(|r| {
            println!("ok: {}", r.config.experiment.name());
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|code| code)
}
