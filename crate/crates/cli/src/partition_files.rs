//! `part-<id>.csv` machine files: rows of comma-separated reals with an
//! optional single header row.

use std::path::{Path, PathBuf};

use del_core::el::Partition;
use del_core::MachineId;

use crate::error::{CliError, Result};

pub fn file_name(id: MachineId) -> String {
    format!("part-{id}.csv")
}

fn machine_id_of(path: &Path) -> Option<MachineId> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("part-")?
        .strip_suffix(".csv")?
        .parse()
        .ok()
}

/// Reads one partition file.
pub fn read_partition(path: &Path, id: MachineId) -> Result<Partition> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut data = Vec::new();
    let mut dim = None;
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(path, e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
        if std::mem::take(&mut first) && parsed.iter().all(Option::is_none) {
            dim = Some(record.len());
            continue;
        }
        let expected = *dim.get_or_insert(record.len());
        if record.len() != expected {
            return Err(CliError::Parse {
                file: path.to_path_buf(),
                line,
                column: record.len().min(expected) + 1,
                message: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        for (col, (field, value)) in record.iter().zip(&parsed).enumerate() {
            match value {
                Some(v) if v.is_finite() => data.push(*v),
                _ => {
                    return Err(CliError::Parse {
                        file: path.to_path_buf(),
                        line,
                        column: col + 1,
                        message: format!("`{field}` is not a finite number"),
                    })
                }
            }
        }
    }
    let dim = dim.unwrap_or(0);
    if data.is_empty() {
        return Err(CliError::Parse {
            file: path.to_path_buf(),
            line: 1,
            column: 1,
            message: "no data rows".into(),
        });
    }
    Ok(Partition::new(id, dim, data)?)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Parse {
            file: path.to_path_buf(),
            line,
            column: 1,
            message: format!("{other:?}"),
        },
    }
}

/// Loads every `part-<id>.csv` in `dir`, ordered by id.
///
/// Ids must be exactly `1..=K`; every file must share the row count and the
/// column count of `part-1.csv`.
pub fn parse_partition_dir(dir: &Path) -> Result<Vec<Partition>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files: Vec<(MachineId, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if let Some(id) = machine_id_of(&path) {
            files.push((id, path));
        }
    }
    files.sort_by_key(|(id, _)| *id);
    if files.is_empty() {
        return Err(CliError::config(
            "data_dir",
            format!("no part-<id>.csv files in {}", dir.display()),
        ));
    }
    for (expect, (id, path)) in (1..).zip(&files) {
        if *id != expect {
            return Err(CliError::config(
                "data_dir",
                format!(
                    "machine ids must be 1..K without gaps; found {} where {expect} was expected",
                    path.display()
                ),
            ));
        }
    }
    let mut parts: Vec<Partition> = Vec::with_capacity(files.len());
    for (id, path) in &files {
        let part = read_partition(path, *id)?;
        if let Some(first) = parts.first() {
            if part.dim() != first.dim() {
                return Err(CliError::DimensionMismatch {
                    file: path.clone(),
                    message: format!("{} columns, but part-1.csv has {}", part.dim(), first.dim()),
                });
            }
            if part.len() != first.len() {
                return Err(CliError::DimensionMismatch {
                    file: path.clone(),
                    message: format!(
                        "{} rows, but part-1.csv has {}; equal partition sizes are required",
                        part.len(),
                        first.len()
                    ),
                });
            }
        }
        parts.push(part);
    }
    Ok(parts)
}

/// Writes one partition with an `x1,...,xd` header, numbers in shortest
/// round-trip form.
pub fn write_partition(dir: &Path, part: &Partition) -> Result<PathBuf> {
    let path = dir.join(file_name(part.machine_id()));
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let header: Vec<String> = (1..=part.dim()).map(|k| format!("x{k}")).collect();
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    for row in part.rows() {
        w.write_record(row.iter().map(f64::to_string))
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn write_partition_dir(dir: &Path, parts: &[Partition]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for p in parts {
        write_partition(dir, p)?;
    }
    Ok(())
}
