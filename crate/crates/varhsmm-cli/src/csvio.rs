//! Numeric CSV reading and writing.
//!
//! The on-disk dialect is deliberately plain: UTF-8, comma separators, one
//! header row, decimal-point doubles, newline-terminated, time implicit in
//! row order. Floats are written in Rust's shortest round-trip form so files
//! re-parse to the exact same values and byte-compare across runs.

use std::fs;
use std::path::Path;

use crate::errors::{CliError, CliResult};

/// Reads a numeric CSV with a header row. Errors name the offending data row
/// and column (both 1-based).
pub fn read_numeric_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CliError::Validation(format!("{}: empty file", path.display())))?;
    let headers: Vec<String> = header_line.split(',').map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().any(|h| h.is_empty()) {
        return Err(CliError::Validation(format!(
            "{}: malformed header row",
            path.display()
        )));
    }

    let mut rows = Vec::new();
    for (line_idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row_num = line_idx + 1; // 1-based data row
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != headers.len() {
            return Err(CliError::Validation(format!(
                "{}: row {row_num} has {} fields, expected {}",
                path.display(),
                fields.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(fields.len());
        for (col_idx, field) in fields.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                CliError::Validation(format!(
                    "{}: row {row_num}, column {}: could not parse '{}' as a number",
                    path.display(),
                    col_idx + 1,
                    field.trim()
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Validation(format!(
                    "{}: row {row_num}, column {}: non-finite value",
                    path.display(),
                    col_idx + 1
                )));
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok((headers, rows))
}

/// Renders a numeric CSV document (header + rows, newline-terminated).
pub fn render_csv(headers: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(&headers.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}

/// Writes a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let dir = path
        .parent()
        .ok_or_else(|| CliError::Validation(format!("{}: no parent directory", path.display())))?;
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Validation(format!("{}: bad file name", path.display())))?;
    let tmp = dir.join(format!(".tmp-{file_name}"));
    fs::write(&tmp, contents).map_err(|e| CliError::io(&format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::io(&format!("renaming into {}", path.display()), e))?;
    Ok(())
}
