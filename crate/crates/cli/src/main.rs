use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evasafe::sim::{audit_assumptions, run_sim, Metrics, Mode, SimConfig, SimLog};

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ABORT: u8 = 2;

/// Safety-filtered closed-loop simulation with evading-maneuver barriers.
#[derive(Parser)]
#[command(name = "evasafe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the CSV log.
    Run {
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        /// Log path; overrides `output.log`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulated seconds; overrides `sim.duration`.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Check the control-authority assumptions by sampling the state region.
    Audit {
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Summarize a run log.
    Metrics { log: PathBuf },
}

fn load(path: &Path) -> Result<SimConfig, ExitCode> {
    SimConfig::from_path(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(CONFIG_ERROR)
    })
}

fn print_metrics(log: &SimLog) {
    match Metrics::from_log(log) {
        Some(m) => {
            println!("{m}");
            print!("{}", m.key_values());
        }
        None => println!("log has no rows"),
    }
}

fn run(config: &Path, mode: Option<Mode>, out: Option<PathBuf>, duration: Option<f64>) -> Result<(), ExitCode> {
    let mut c = load(config)?;
    if let Some(mode) = mode {
        c.sim.mode = mode;
    }
    if out.is_some() {
        c.output.log = out;
    }
    if let Some(d) = duration {
        c.sim.duration = d;
        c.validate().map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(CONFIG_ERROR)
        })?;
    }
    match run_sim(&c) {
        Ok(result) => {
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            println!("mode {}", c.sim.mode);
            if let Some(path) = &c.output.log {
                println!("log {}", path.display());
            }
            print_metrics(&result.log);
            Ok(())
        }
        Err(abort) if abort.is_config_error() => {
            eprintln!("error: {}", abort.error);
            Err(ExitCode::from(CONFIG_ERROR))
        }
        Err(abort) => {
            eprintln!("error: run aborted: {}", abort.error);
            if let Some(log) = &abort.log {
                eprintln!("{} rows written before the abort", log.rows.len());
                print_metrics(log);
            }
            Err(ExitCode::from(RUNTIME_ABORT))
        }
    }
}

fn audit(config: &Path, samples: usize) -> Result<(), ExitCode> {
    let c = load(config)?;
    let scenario = c.build().map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(CONFIG_ERROR)
    })?;
    let report = audit_assumptions(&scenario, samples, c.seed);
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        for f in report.failures() {
            eprintln!("failed: {f}");
        }
        Err(ExitCode::from(CONFIG_ERROR))
    }
}

fn metrics(path: &Path) -> Result<(), ExitCode> {
    let log = SimLog::read(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })?;
    print_metrics(&log);
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors are configuration errors; clap's own code 2 would read as
    // an aborted run.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(CONFIG_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            mode,
            out,
            duration,
        } => run(&config, mode, out, duration),
        Command::Audit { config, samples } => audit(&config, samples),
        Command::Metrics { log } => metrics(&log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
