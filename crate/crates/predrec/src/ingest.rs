//! CSV input.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use predrec_core::Observation;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Which columns of a headed CSV file to read.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    /// Response column; the first column when unset.
    pub response: Option<String>,
    /// Binomial trial counts.
    pub trials: Option<String>,
    pub predictors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Vec<String>,
    pub response_column: String,
    pub observations: Vec<Observation>,
    /// One vector per requested predictor, in request order.
    pub predictors: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.observations.len()
    }

    pub fn responses(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y).collect()
    }
}

pub fn ingest_csv(path: &Path, spec: &ColumnSpec) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    ingest_reader(file, spec)
}

pub fn ingest_reader<R: Read>(reader: R, spec: &ColumnSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(CliError::Empty("input has no header row".into()));
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))
    };
    let response_column = spec.response.clone().unwrap_or_else(|| header[0].clone());
    let y_col = find(&response_column)?;
    let n_col = spec.trials.as_deref().map(find).transpose()?;
    let x_cols = spec.predictors.iter().map(|p| find(p)).collect::<Result<Vec<_>>>()?;

    let mut observations = Vec::new();
    let mut predictors = vec![Vec::new(); x_cols.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| !v.is_nan())
                .ok_or_else(|| CliError::Parse {
                    row,
                    column: header[col].clone(),
                    value: raw.to_string(),
                })
        };
        let y = cell(y_col)?;
        let trials = match n_col {
            Some(col) => {
                let t = cell(col)?;
                if t < 0.0 || t.trunc() != t || t > u64::MAX as f64 {
                    return Err(CliError::Parse {
                        row,
                        column: header[col].clone(),
                        value: t.to_string(),
                    });
                }
                Some(t as u64)
            }
            None => None,
        };
        observations.push(Observation { y, trials });
        for (dst, &col) in predictors.iter_mut().zip(&x_cols) {
            dst.push(cell(col)?);
        }
    }
    if observations.is_empty() {
        return Err(CliError::Empty("input has no data rows".into()));
    }
    Ok(Dataset {
        header,
        response_column,
        observations,
        predictors,
    })
}
