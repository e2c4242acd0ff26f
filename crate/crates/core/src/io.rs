//! Small CSV and TOML helpers with line-level diagnostics.

use crate::error::{Error, Result};

/// A parsed CSV table of raw cells.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// 1-based source line of each row.
    pub lines: Vec<usize>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn cell_error(&self, row: usize, col: usize, what: &str) -> Error {
        Error::Parse {
            line: self.lines[row],
            message: format!("column `{}`: cannot parse `{}` as {what}", self.header[col], self.rows[row][col]),
        }
    }

    /// Float cell; an empty cell reads as NaN.
    pub fn float(&self, row: usize, col: usize) -> Result<f64> {
        let s = self.rows[row][col].as_str();
        if s.is_empty() {
            return Ok(f64::NAN);
        }
        s.parse::<f64>().map_err(|_| self.cell_error(row, col, "a number"))
    }

    pub fn uint(&self, row: usize, col: usize) -> Result<u64> {
        self.rows[row][col].parse::<u64>().map_err(|_| self.cell_error(row, col, "a non-negative integer"))
    }

    pub fn column(&self, col: usize) -> Result<Vec<f64>> {
        (0..self.rows.len()).map(|r| self.float(r, col)).collect()
    }
}

/// Formats a numeric table. Floats use the shortest round-trip representation.
pub fn format_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|v| format!("{v}")).collect()).collect();
    format_cells(header, &cells)
}

pub fn format_cells(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a CSV whose header must start with the `required` columns.
pub fn parse_csv(text: &str, required: &[&str]) -> Result<Table> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
    let header: Vec<String> = head.split(',').map(|s| s.trim().to_string()).collect();
    for (i, want) in required.iter().enumerate() {
        if header.get(i).map(String::as_str) != Some(*want) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header column {} to be `{}`, found {:?}", i + 1, want, header.get(i)),
            });
        }
    }
    let mut rows = Vec::new();
    let mut line_nos = Vec::new();
    for (idx, line) in lines {
        let cells: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if cells.len() != header.len() {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected {} fields, found {}", header.len(), cells.len()),
            });
        }
        rows.push(cells);
        line_nos.push(idx + 1);
    }
    Ok(Table { header, rows, lines: line_nos })
}

/// Converts a TOML deserialization error into a line-numbered parse error.
pub fn toml_error(text: &str, err: &toml::de::Error) -> Error {
    let line = err.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse { line, message: err.message().to_string() }
}
