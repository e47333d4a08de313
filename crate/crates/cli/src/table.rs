//! CSV tables of floats, JSON artifacts and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// A headed numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    /// Columns `names`, in that order, for every row.
    pub fn select(&self, names: &[String], path: &Path) -> Result<Vec<Vec<f64>>> {
        let idx = names
            .iter()
            .map(|n| {
                self.header
                    .iter()
                    .position(|h| h == n)
                    .with_context(|| format!("{}: missing column `{n}`", path.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.rows.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect())
    }
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let header: Vec<String> = rdr
        .headers()
        .with_context(|| format!("{}: unreadable header", path.display()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut table = Table::new(header);
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let v: f64 = f.parse().with_context(|| {
                    format!("{}: line {line}, field `{}`: `{f}` is not a number", path.display(), table.header[i])
                })?;
                if !v.is_finite() {
                    bail!("{}: line {line}, field `{}`: non-finite value", path.display(), table.header[i]);
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        table.rows.push(row);
    }
    if table.rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(table)
}

/// Scientific notation with 17 significant digits; round-trips every `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn table_csv(table: &Table) -> String {
    let mut s = table.header.join(",");
    s.push('\n');
    for r in &table.rows {
        let cells: Vec<String> = r.iter().map(|&v| fmt_float(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = parent_dir(path);
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    write_atomic(path, table_csv(table).as_bytes())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", path.display()))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Fails fast when an input is missing or an output directory does not exist.
pub fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for p in inputs {
        if !p.is_file() {
            bail!("input file {} does not exist", p.display());
        }
    }
    for p in outputs {
        let dir = parent_dir(p);
        if !dir.is_dir() {
            bail!("output directory {} does not exist", dir.display());
        }
        if p.is_dir() {
            bail!("output path {} is a directory", p.display());
        }
    }
    Ok(())
}
