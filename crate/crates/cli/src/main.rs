use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pfd::verify::Faults;

use pfd_cli::commands::{cmd_run, list_presets, verify, EXIT_CONFIG, EXIT_OK};

/// Probability functional descent on finite spaces.
#[derive(Debug, Parser)]
#[command(name = "pfd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fault {
    /// Negate the reverse-KL influence function.
    NsSignFlip,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one or more configurations and write trace.csv and result.txt.
    Run {
        /// INI configuration file; repeat to run several.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Output directory; overrides `out_dir` in the file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of configurations to run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run numerical verification suites (all by default).
    Verify {
        /// Suite to run.
        #[arg(value_name = "SUITE", conflicts_with = "suite")]
        name: Option<String>,
        #[arg(long)]
        suite: Option<String>,
        /// Inject a known defect to confirm the checks catch it.
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
    },
    /// List the named algorithm presets.
    ListPresets,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match cli.command {
        Command::Run { configs, out, jobs } => cmd_run(&configs, out.as_deref(), jobs),
        Command::Verify { name, suite, inject_fault } => {
            let faults = Faults { ns_sign_flip: matches!(inject_fault, Some(Fault::NsSignFlip)) };
            match verify(name.or(suite).as_deref(), faults) {
                Ok(_) => EXIT_OK,
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::ListPresets => {
            list_presets();
            EXIT_OK
        }
    };
    ExitCode::from(code as u8)
}
