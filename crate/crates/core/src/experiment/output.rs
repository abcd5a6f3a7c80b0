//! Result file, CSV tables and the run-directory lock.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::VerificationReport;
use crate::error::{Error, Result};

pub const LOCK_FILE: &str = ".heatlab.lock";
pub const RESULT_FILE: &str = "result.json";
pub const DISTRIBUTION_FILE: &str = "distribution.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SCAN_FILE: &str = "scan.csv";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// Exclusive ownership of an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(Error::io(
                &path,
                io::Error::new(
                    io::ErrorKind::AlreadyExists,
                    "output directory is in use by another run; remove the lock file if that run is gone",
                ),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A CSV cell.
pub enum Cell<'a> {
    Text(&'a str),
    Number(f64),
    Flag(bool),
}

impl Cell<'_> {
    fn render(&self, out: &mut String) {
        match self {
            Cell::Text(s) => out.push_str(s),
            // 17 significant digits round-trip every f64
            Cell::Number(x) => write!(out, "{x:.16e}").unwrap(),
            Cell::Flag(b) => out.push_str(if *b { "true" } else { "false" }),
        }
    }
}

/// Comma-separated table with a header row and LF line endings.
pub fn csv_table<'a>(header: &[&str], rows: impl IntoIterator<Item = Vec<Cell<'a>>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            cell.render(&mut out);
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical { what: format!("cannot serialize result: {e}"), residual: f64::NAN })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn report_rows(reports: &[VerificationReport]) -> impl Iterator<Item = Vec<Cell<'_>>> {
    reports
        .iter()
        .map(|r| vec![Cell::Text(&r.name), Cell::Number(r.max_error), Cell::Number(r.tolerance), Cell::Flag(r.passed)])
}

/// Human-readable summary, one line per check.
pub fn format_reports(reports: &[VerificationReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>12}  {:>12}  status\n", "check", "max_error", "tolerance");
    for r in reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{:<width$}  {:>12.3e}  {:>12.3e}  {status}", r.name, r.max_error, r.tolerance).unwrap();
    }
    out
}
