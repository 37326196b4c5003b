//! CSV ingestion with positional diagnostics, and fixed-precision output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use sknr::harness::PointCloud;
use sknr::{CostMatrix, DiscreteMeasure};

/// Weight sums further than this from 1 are renormalized with a warning.
pub const WEIGHT_SUM_WARNING: f64 = 1e-9;

/// Fixed 17-significant-digit scientific notation; parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct Table {
    header: Option<Vec<String>>,
    rows: Vec<Vec<f64>>,
}

fn parse_number(field: &str, path: &Path, line: u64, column: usize) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| {
        anyhow!(
            "{}: line {line}, column {column}: cannot parse '{}' as a number",
            path.display(),
            field.trim()
        )
    })?;
    if !value.is_finite() {
        bail!(
            "{}: line {line}, column {column}: non-finite value '{}'",
            path.display(),
            field.trim()
        );
    }
    Ok(value)
}

fn is_numeric_row(record: &csv::StringRecord) -> bool {
    record.iter().all(|f| f.trim().parse::<f64>().is_ok())
}

/// Reads a rectangular numeric CSV. A first row that is not entirely numeric is a header.
fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if k == 0 && !is_numeric_row(&record) {
            header = Some(record.iter().map(|s| s.to_string()).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => bail!(
                "{}: line {line}, column {}: expected {w} fields, found {}",
                path.display(),
                record.len().min(w) + 1,
                record.len()
            ),
            _ => width = Some(record.len()),
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| parse_number(field, path, line, c + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(Table { header, rows })
}

/// Validates positive weights and rescales them to unit mass.
pub fn measure_from_weights(weights: Vec<f64>, origin: &Path) -> Result<DiscreteMeasure> {
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| **w <= 0.0) {
        bail!(
            "{}: weight {} on data row {} must be positive",
            origin.display(),
            w,
            i + 1
        );
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_WARNING {
        eprintln!(
            "warning: {}: weights sum to {}; renormalizing",
            origin.display(),
            fmt_f64(total)
        );
    }
    DiscreteMeasure::normalized(weights).map_err(|e| anyhow!("{}: {e}", origin.display()))
}

/// One point per row. A header whose last name is `weight` marks a weight column.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let table = read_table(path)?;
    let has_weight = table
        .header
        .as_ref()
        .and_then(|h| h.last())
        .is_some_and(|name| name.eq_ignore_ascii_case("weight"));
    let width = table.rows[0].len();
    let dim = if has_weight { width - 1 } else { width };
    if dim == 0 {
        bail!("{}: no coordinate columns", path.display());
    }
    let points = DMatrix::from_fn(table.rows.len(), dim, |i, j| table.rows[i][j]);
    let weights = if has_weight {
        measure_from_weights(table.rows.iter().map(|r| r[dim]).collect(), path)?
    } else {
        DiscreteMeasure::uniform(table.rows.len())?
    };
    PointCloud::new(points, weights).map_err(|e| anyhow!("{}: {e}", path.display()))
}

pub fn read_cost(path: &Path) -> Result<CostMatrix> {
    let table = read_table(path)?;
    CostMatrix::from_rows(&table.rows).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Weights as one column (or one row) of numbers.
pub fn read_weights(path: &Path) -> Result<DiscreteMeasure> {
    let table = read_table(path)?;
    let values: Vec<f64> = if table.rows.len() == 1 {
        table.rows[0].clone()
    } else if table.rows[0].len() == 1 {
        table.rows.iter().map(|r| r[0]).collect()
    } else {
        bail!(
            "{}: weights must be a single row or a single column",
            path.display()
        );
    };
    measure_from_weights(values, path)
}

pub fn vector_csv(v: &DVector<f64>) -> String {
    let mut out = String::with_capacity(v.len() * 24);
    for x in v.iter() {
        out.push_str(&fmt_f64(*x));
        out.push('\n');
    }
    out
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 25);
    for row in m.row_iter() {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(*x));
        }
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// A CSV document built row by row.
pub struct CsvText(String);

impl CsvText {
    pub fn new(header: &str) -> Self {
        Self(format!("{header}\n"))
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.0, "{}", fields.join(","));
    }

    pub fn into_string(self) -> String {
        self.0
    }
}
