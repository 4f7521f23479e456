use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::distribution::ScenarioMatrix;
use crate::error::{Error, Result};

/// Source name of the bundled annual-return table.
pub const BUILTIN_APPENDIX: &str = "builtin:appendix";

const APPENDIX_CSV: &str = include_str!("../../data/markowitz_appendix.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub matrix: ScenarioMatrix,
    pub row_labels: Vec<String>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub source: String,
    pub scenarios: usize,
    pub assets: usize,
    pub asset_labels: Vec<String>,
    pub first_row: String,
    pub last_row: String,
}

impl Dataset {
    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            source: self.source.clone(),
            scenarios: self.matrix.scenarios(),
            assets: self.matrix.assets(),
            asset_labels: self.matrix.asset_labels().to_vec(),
            first_row: self.row_labels.first().cloned().unwrap_or_default(),
            last_row: self.row_labels.last().cloned().unwrap_or_default(),
        }
    }

    /// Keep the given zero-based columns in order.
    pub fn select(&self, columns: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            matrix: self.matrix.select_columns(columns)?,
            row_labels: self.row_labels.clone(),
            source: self.source.clone(),
        })
    }
}

pub fn appendix() -> Dataset {
    parse_csv(APPENDIX_CSV.as_bytes(), Path::new(BUILTIN_APPENDIX)).expect("bundled table parses")
}

/// Load a dataset from disk, or the bundled table for [`BUILTIN_APPENDIX`].
pub fn load_csv(path: &Path) -> Result<Dataset> {
    if path.as_os_str() == BUILTIN_APPENDIX {
        return Ok(appendix());
    }
    let file = std::fs::File::open(path)?;
    parse_csv(file, path)
}

fn parse_error(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        column,
        message: message.into(),
    }
}

/// Parse `label,<asset...>` CSV. Lines and columns in errors are 1-based.
pub fn parse_csv<R: Read>(reader: R, path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_error(path, 1, 1, e.to_string()))?
        .clone();
    if header.len() < 2 || header.iter().all(str::is_empty) {
        return Err(parse_error(path, 1, 1, "expected a header `label,<asset names...>`"));
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut rows = Vec::new();
    let mut row_labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, 1, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(parse_error(
                path,
                line,
                record.len().min(header.len()) + 1,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let mut row = Vec::with_capacity(labels.len());
        for (k, cell) in record.iter().enumerate().skip(1) {
            let value: f64 = cell.parse().map_err(|_| {
                parse_error(path, line, k + 1, format!("`{cell}` is not a decimal number"))
            })?;
            if !value.is_finite() {
                return Err(parse_error(path, line, k + 1, format!("`{cell}` is not finite")));
            }
            row.push(value);
        }
        row_labels.push(record[0].to_owned());
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(path, 2, 1, "no data rows"));
    }
    Ok(Dataset {
        matrix: ScenarioMatrix::new(rows, labels)?,
        row_labels,
        source: path.display().to_string(),
    })
}

pub fn to_csv_string(d: &Dataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_owned()];
    header.extend(d.matrix.asset_labels().iter().cloned());
    w.write_record(&header)?;
    for (label, row) in d.row_labels.iter().zip(d.matrix.rows()) {
        let mut record = vec![label.clone()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
