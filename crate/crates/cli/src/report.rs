//! Report files: pretty JSON always, a flat CSV mirror on request.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Write `<stem>.json` and, for `Format::Csv`, `<stem>.csv` from `rows`.
pub fn write_report<T: Serialize, R: Serialize>(
    out: &Path,
    stem: &str,
    report: &T,
    rows: &[R],
    format: Format,
) -> Result<()> {
    write_json(&out.join(format!("{stem}.json")), report)?;
    if format == Format::Csv {
        write_csv(&out.join(format!("{stem}.csv")), rows)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))
}

/// Fraction in `[0, 1]` as percentage points.
pub fn pct(x: f64) -> f64 {
    100.0 * x
}
