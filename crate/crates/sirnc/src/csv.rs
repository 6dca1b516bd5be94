//! CSV output for trajectories and sweep tables.
//!
//! Format contract: header `t,<labels...>`, one row per grid point, every
//! number printed with 17 significant digits so written files re-parse to
//! bit-identical doubles, LF line endings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::core::Trajectory;

/// Formats a double with 17 significant digits (round-trip exact).
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a table of named columns. All columns must have equal length.
pub fn write_columns(path: &Path, labels: &[&str], columns: &[&[f64]]) -> std::io::Result<()> {
    assert_eq!(labels.len(), columns.len(), "one label per column");
    if let Some(first) = columns.first() {
        assert!(columns.iter().all(|c| c.len() == first.len()), "ragged columns");
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", labels.join(","))?;
    let rows = columns.first().map_or(0, |c| c.len());
    for row in 0..rows {
        let line: Vec<String> = columns.iter().map(|c| format_f64(c[row])).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()
}

/// Writes a trajectory as `t,s,i,r`.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> std::io::Result<()> {
    write_columns(path, &["t", "s", "i", "r"], &[&traj.times, &traj.s, &traj.i, &traj.r])
}
