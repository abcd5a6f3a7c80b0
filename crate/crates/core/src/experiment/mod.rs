//! Config-driven experiments: parse a TOML description, run the protocol,
//! write `result.json` plus CSV tables.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{load, parse, Experiment, ExperimentConfig, Mode};
pub use output::{CONFIG_ECHO_FILE, DISTRIBUTION_FILE, LOCK_FILE, REPORT_FILE, RESULT_FILE, SCAN_FILE};
pub use runner::{run, scan, verify, Command, Outcome, RunOptions, RunResult};

/// Process exit status for a finished command: 0 if every check passed,
/// 1 otherwise.
pub fn exit_code(outcome: &Outcome) -> i32 {
    if outcome.passed {
        0
    } else {
        1
    }
}

/// Exit status for a command that could not finish: 2 for problems with the
/// experiment description, 1 for numerical or I/O failures.
pub fn error_exit_code(err: &crate::Error) -> i32 {
    if err.is_input_error() {
        2
    } else {
        1
    }
}
