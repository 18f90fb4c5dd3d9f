use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use event_spectra_cli::{run_with_threads, threads_from_env, RunConfig, FORMATS, THREADS_ENV};

#[derive(Parser)]
#[command(name = "event-spectra", version, about = "Event-camera structured light and spectroscopy simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured pipelines and write artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Describe the artifact file formats.
    Formats,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Formats => {
            print!("{FORMATS}");
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match RunConfig::load(&config) {
            Ok(cfg) => {
                println!("ok: {} pipeline, schema {}", cfg.pipeline.name(), cfg.schema);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run { config, out, seed } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let threads = match threads_from_env(std::env::var(THREADS_ENV).ok().as_deref()) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let out = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("event-spectra-out"));
            match run_with_threads(&cfg, &out, seed, threads) {
                Ok(summary) => {
                    println!(
                        "wrote {} metrics to {} (seed {})",
                        summary.rows.len(),
                        summary.out.display(),
                        summary.seed
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
