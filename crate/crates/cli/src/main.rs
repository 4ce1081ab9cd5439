use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dppd_core::report::{compare, format_rows, DEFAULT_CHECKPOINTS};
use dppd_core::scenario::{Scenario, ScenarioError};
use dppd_core::trace::read_trace;

/// Distributed proximal primal-dual solver.
#[derive(Debug, Parser)]
#[command(name = "dppd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario; writes the trace CSV and a summary.
    Run {
        config: PathBuf,
        /// Directory for outputs, overrides the scenario path.
        #[arg(long, env = "DPPD_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
    /// Check the scenario and its graph schedule without running.
    Validate { config: PathBuf },
    /// Write the weight matrices of the first rounds as CSV.
    DumpGraph {
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the dual radius and print the bound report.
    Dualbound { config: PathBuf },
    /// Compare the errors of two traces.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long = "fstar", allow_hyphen_values = true)]
        f_star: f64,
        /// Checkpoints, comma separated.
        #[arg(long, value_delimiter = ',')]
        at: Vec<usize>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn runtime(message: impl ToString) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn load_table(path: &Path) -> Result<dppd_core::trace::TraceTable, Failure> {
    let file = File::open(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    read_trace(file).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    let stdout = io::stdout();
    match cmd {
        Command::Run { config, output_dir } => {
            let s = Scenario::load(&config)?;
            let out = s.execute(output_dir.as_deref())?;
            print!("{}", out.summary);
        }
        Command::Validate { config } => {
            let s = Scenario::load(&config)?;
            let (report, ok) = s.validate()?;
            print!("{report}");
            if !ok {
                return Err(usage("schedule fails validation"));
            }
        }
        Command::DumpGraph { config, rounds, out } => {
            let s = Scenario::load(&config)?;
            let setup = s.build()?;
            match out {
                Some(path) => {
                    let file = File::create(&path).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
                    setup.schedule.dump_csv(rounds, BufWriter::new(file)).map_err(runtime)?;
                }
                None => setup.schedule.dump_csv(rounds, stdout.lock()).map_err(runtime)?,
            }
        }
        Command::Dualbound { config } => {
            let (report, _) = Scenario::load(&config)?.dual_bound_report()?;
            print!("{report}");
        }
        Command::Compare { a, b, f_star, at } => {
            let (ta, tb) = (load_table(&a)?, load_table(&b)?);
            let ks = if at.is_empty() { DEFAULT_CHECKPOINTS.to_vec() } else { at };
            let rows = compare(&ta, &tb, f_star, &ks).map_err(runtime)?;
            let mut lock = stdout.lock();
            lock.write_all(format_rows(&rows).as_bytes()).map_err(runtime)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
