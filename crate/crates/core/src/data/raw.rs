//! Typed CSV records before encoding.

use std::io::Read;
use std::path::Path;

use super::schema::{ColumnKind, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
}

impl Cell {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            Cell::Number(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// One cell per schema feature column, in schema order.
    pub features: Vec<Cell>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub schema: Schema,
    pub records: Vec<RawRecord>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> RawDataset {
        RawDataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// Parse CSV text according to `schema`. Row numbers in errors count data
/// rows from 1, excluding any header.
pub fn parse_csv<R: Read>(reader: R, schema: &Schema) -> Result<RawDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    if schema.has_header {
        let header = rdr.headers()?.clone();
        let names: Vec<&str> = header.iter().map(|h| h.trim_start_matches('\u{feff}')).collect();
        let expected: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
        let same = names.len() == expected.len()
            && names.iter().zip(&expected).all(|(a, b)| a.eq_ignore_ascii_case(b));
        if !same {
            return Err(Error::Data(format!(
                "header does not match schema: expected {} columns [{}], found {} [{}]",
                expected.len(),
                expected.join(","),
                names.len(),
                names.join(",")
            )));
        }
    }
    let width = schema.columns.len();
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != width {
            return Err(Error::Row {
                row: row_no,
                detail: format!("expected {width} cells, found {}", row.len()),
            });
        }
        let mut features = Vec::with_capacity(width);
        let mut label = String::new();
        for (cell, col) in row.iter().zip(&schema.columns) {
            match col.kind {
                ColumnKind::Numeric => {
                    let v: f64 = cell.parse().map_err(|_| Error::Row {
                        row: row_no,
                        detail: format!("column {}: cannot parse {cell:?} as a number", col.name),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Row {
                            row: row_no,
                            detail: format!("column {}: non-finite value {cell:?}", col.name),
                        });
                    }
                    features.push(Cell::Number(v));
                }
                ColumnKind::Nominal => features.push(Cell::Text(cell.to_string())),
                ColumnKind::Label => label = cell.to_string(),
                ColumnKind::Ignore => {}
            }
        }
        records.push(RawRecord { features, label });
    }
    Ok(RawDataset {
        schema: schema.clone(),
        records,
    })
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(std::io::BufReader::new(file), schema)
}
