//! Small deterministic writers: CSV rows and line-based key=value summaries.

use std::fmt::Write as _;
use std::path::Path;

use ppdn::objective::LossBreakdown;

use crate::experiment::SetAccuracy;
use crate::CliError;

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// key=value lines, one per entry.
pub fn summary_text(entries: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Pipe-joined per-class accuracies; classes with no test samples print
/// as "-".
pub fn per_class_cell(acc: &SetAccuracy) -> String {
    acc.per_class
        .iter()
        .map(|&(correct, total)| {
            if total == 0 {
                "-".to_string()
            } else {
                format!("{}", correct as f64 / total as f64)
            }
        })
        .collect::<Vec<_>>()
        .join("|")
}

pub fn breakdown_cells(b: &LossBreakdown) -> String {
    format!("{},{},{},{},{}", b.j1, b.j2, b.j3, b.reg, b.total)
}

pub const BREAKDOWN_HEADER: &str = "j1,j2,j3,reg,total";
