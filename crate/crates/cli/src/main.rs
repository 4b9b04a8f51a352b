//! Experiment driver for the robust turnstile moment estimator.

mod experiment;
mod spec;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spec::{ExperimentSpec, Flags};

#[derive(Parser)]
#[command(name = "turnstile", version, about = "Play adaptive streaming games against F_p estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play one configuration `runs` times: one transcript CSV per run plus summary.csv.
    Run(Flags),
    /// Play every m (and T) in the lists and fit log-log slopes of peak space.
    Sweep(Flags),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (flags, sweep) = match &cli.command {
        Command::Run(f) => (f, false),
        Command::Sweep(f) => (f, true),
    };
    let spec = match ExperimentSpec::resolve(flags) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: bad configuration: {e}");
            return ExitCode::from(2);
        }
    };
    if !sweep && (spec.ms.len() > 1 || spec.thresholds.len() > 1) {
        eprintln!("error: bad configuration: `run` takes a single m and T; use `sweep` for lists");
        return ExitCode::from(2);
    }
    let replay = match experiment::load_replay(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: bad configuration: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result =
        if sweep { experiment::sweep(&spec, replay.as_deref()) } else { experiment::run(&spec, replay.as_deref()) };
    match result {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            if report.all_completed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
