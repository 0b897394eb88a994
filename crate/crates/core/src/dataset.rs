//! CSV ingestion with per-column standardization.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::standardize_columns;

/// A standardized regression dataset read from CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetHandle {
    pub source: PathBuf,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Original per-column means, features first, then the target.
    pub means: Vec<f64>,
    /// Original per-column population standard deviations, same layout.
    pub stds: Vec<f64>,
    /// Rows dropped because a cell was missing.
    pub dropped_rows: usize,
    #[serde(skip)]
    pub design: DMatrix<f64>,
    #[serde(skip)]
    pub target: Vec<f64>,
}

impl DatasetHandle {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn d(&self) -> usize {
        self.design.ncols()
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell,
        "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "NAN" | "null"
    )
}

/// Reads a CSV with a header row, drops rows with missing cells, and
/// standardizes every column (population standard deviation). The target
/// column is split off from the features.
pub fn load_csv_standardized(path: &Path, target_column: &str) -> Result<DatasetHandle> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| {
            Error::invalid(format!(
                "no column named `{target_column}` in {}",
                path.display()
            ))
        })?;
    if headers.len() < 2 {
        return Err(Error::invalid("dataset needs at least one feature column"));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // line 1 is the header
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        if record.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        let row = record
            .iter()
            .zip(&headers)
            .map(|(cell, name)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row: line,
                    column: name.clone(),
                    message: format!("`{cell}` is not a finite number"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if dropped > 0 {
        log::info!(
            "dropped {dropped} rows with missing values from {}",
            path.display()
        );
    }

    let order: Vec<usize> = (0..headers.len())
        .filter(|&j| j != target_idx)
        .chain([target_idx])
        .collect();
    let mut all = DMatrix::from_fn(rows.len(), order.len(), |i, j| rows[i][order[j]]);
    if all.nrows() < 2 {
        return Err(Error::invalid(format!(
            "{} has {} complete rows; at least two are needed",
            path.display(),
            all.nrows()
        )));
    }
    for (j, col) in all.column_iter().enumerate() {
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::invalid(format!(
                "column `{}` has zero variance",
                headers[order[j]]
            )));
        }
    }
    let (means, stds) = standardize_columns(&mut all)?;
    let d = order.len() - 1;
    Ok(DatasetHandle {
        source: path.to_path_buf(),
        feature_names: order[..d].iter().map(|&j| headers[j].clone()).collect(),
        target_name: target_column.to_string(),
        means,
        stds,
        dropped_rows: dropped,
        design: all.columns(0, d).into_owned(),
        target: all.column(d).iter().copied().collect(),
    })
}
