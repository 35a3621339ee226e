//! CSV ingestion and emission.
//!
//! Canonical layout: header `s,z,d,y,x1..xp`, one row per participant,
//! binary columns as 0/1 integers, empty cells for values a role does not
//! require. Any header column other than `s`, `z`, `d`, `y` is a covariate.

use std::path::Path;

use crate::error::{Error, Result};

use super::{Covariate, RoleConfig, TrialDataset, MISSING_LEVEL};

fn parse_binary(cell: &str, row: usize, col: &str) -> Result<Option<u8>> {
    match cell.trim() {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(Error::MalformedRow {
            row,
            reason: format!("column '{col}' holds '{other}', expected 0/1 or empty"),
        }),
    }
}

/// Load and validate a dataset.
///
/// Covariate columns are typed by inspection: a column whose non-empty cells
/// all parse as numbers is continuous (empty cells are rejected there);
/// anything else is categorical, with empty cells mapped to the explicit
/// `"missing"` level.
pub fn load_dataset(path: impl AsRef<Path>, schema: &RoleConfig) -> Result<TrialDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            },
            _ => Error::Csv(e),
        })?;

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let s_idx = find("s").ok_or_else(|| Error::MissingRequiredColumn {
        column: "s".into(),
        trial: "*".into(),
        role: "*".into(),
    })?;
    let z_idx = find("z");
    let d_idx = find("d");
    let y_idx = find("y");
    let reserved = [Some(s_idx), z_idx, d_idx, y_idx];
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|i| !reserved.contains(&Some(*i)))
        .collect();
    let covariate_names: Vec<String> = covariate_cols.iter().map(|&i| headers[i].clone()).collect();

    let mut trial = Vec::new();
    let mut z = Vec::new();
    let mut d = Vec::new();
    let mut y = Vec::new();
    let mut raw_cov: Vec<Vec<String>> = vec![Vec::new(); covariate_cols.len()];

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or("").trim();
        let label = get(s_idx);
        if label.is_empty() {
            return Err(Error::MalformedRow {
                row: row_idx,
                reason: "empty trial label".into(),
            });
        }
        trial.push(label.to_string());
        z.push(match z_idx {
            Some(i) => parse_binary(get(i), row_idx, "z")?,
            None => None,
        });
        d.push(match d_idx {
            Some(i) => parse_binary(get(i), row_idx, "d")?,
            None => None,
        });
        y.push(match y_idx {
            Some(i) => parse_binary(get(i), row_idx, "y")?,
            None => None,
        });
        for (slot, &col) in raw_cov.iter_mut().zip(&covariate_cols) {
            slot.push(get(col).to_string());
        }
    }

    let mut columns = Vec::with_capacity(raw_cov.len());
    for (cells, name) in raw_cov.iter().zip(&covariate_names) {
        columns.push(type_column(cells, name)?);
    }

    TrialDataset::from_parts(
        schema.clone(),
        covariate_names,
        columns,
        z,
        d,
        y,
        trial,
    )
}

/// Infer a column's type and encode it.
fn type_column(cells: &[String], name: &str) -> Result<Covariate> {
    let numeric = cells
        .iter()
        .filter(|c| !c.is_empty())
        .all(|c| c.parse::<f64>().is_ok());
    let any_nonempty = cells.iter().any(|c| !c.is_empty());
    if numeric && any_nonempty {
        let mut values = Vec::with_capacity(cells.len());
        for (row, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("continuous covariate '{name}' has a missing value"),
                });
            }
            values.push(cell.parse::<f64>().unwrap());
        }
        Ok(Covariate::Continuous(values))
    } else {
        let mut levels: Vec<String> = Vec::new();
        let mut codes = Vec::with_capacity(cells.len());
        for cell in cells {
            let level = if cell.is_empty() { MISSING_LEVEL } else { cell.as_str() };
            let idx = match levels.iter().position(|l| l == level) {
                Some(i) => i,
                None => {
                    levels.push(level.to_string());
                    levels.len() - 1
                }
            };
            codes.push(idx as u32);
        }
        Ok(Covariate::Categorical { levels, codes })
    }
}

/// Write a dataset back to CSV with the canonical header
/// `s,z,d,y,<covariates>`; absent values become empty cells.
pub fn write_dataset(ds: &TrialDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
    })?;
    let mut header = vec!["s".to_string(), "z".into(), "d".into(), "y".into()];
    header.extend(ds.covariate_names().iter().cloned());
    writer.write_record(&header)?;

    let fmt_bin = |v: Option<u8>| v.map(|b| b.to_string()).unwrap_or_default();
    for row in 0..ds.n_rows() {
        let mut rec = vec![
            ds.trial_label(row).to_string(),
            fmt_bin(ds.z(row)),
            fmt_bin(ds.d(row)),
            fmt_bin(ds.y(row)),
        ];
        for col in ds.covariates() {
            rec.push(match col {
                Covariate::Continuous(v) => format!("{}", v[row]),
                Covariate::Categorical { levels, codes } => levels[codes[row] as usize].clone(),
            });
        }
        writer.write_record(&rec)?;
    }
    writer.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}
