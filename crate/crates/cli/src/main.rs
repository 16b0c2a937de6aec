use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kkdetect_cli::config::{describe, EXPERIMENTS};
use kkdetect_cli::{parse_config, run_experiment, write_outputs, CliError};

#[derive(Parser)]
#[command(
    name = "kkdetect",
    version,
    about = "Run quantum detection experiments from JSON configs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output_dir` or `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print what an experiment computes and which config fields it reads.
    Describe { name: String },
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>, threads: Option<usize>) -> Result<(), CliError> {
    if let Some(k) = threads {
        if k == 0 {
            return Err(CliError::config("--threads", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let raw = std::fs::read(&config).map_err(|e| CliError::Io(format!("{}: {e}", config.display())))?;
    let text = std::str::from_utf8(&raw).map_err(|e| CliError::config("<file>", e))?;
    let cfg = parse_config(text)?;
    let base = config.parent().map(PathBuf::from).unwrap_or_default();
    let result = run_experiment(&cfg, &raw, &base, seed)?;
    let dir = out
        .or_else(|| cfg.output_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("out"));
    write_outputs(&dir, &result.files)?;
    println!("{}", serde_json::Value::Object(result.summary));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => run(config, seed, out, threads),
        Command::Describe { name } => match describe(&name) {
            Some(text) => {
                println!("{text}");
                Ok(())
            }
            None => Err(CliError::config(
                "name",
                format!("unknown experiment `{name}`; known: {}", EXPERIMENTS.join(", ")),
            )),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
