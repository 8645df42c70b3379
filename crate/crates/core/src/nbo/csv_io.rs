//! Contract table I/O: `contracts.csv` with a JSON schema sidecar declaring
//! each column's kind.

use std::path::Path;

use crate::error::{Error, Result};

use super::{ColumnKind, ContractRecord, ContractSchema, ContractSet};

pub const CONTRACTS_FILE: &str = "contracts.csv";
pub const SCHEMA_FILE: &str = "contracts_schema.json";

fn parse_err(path: &Path, line: u64, detail: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, detail: detail.into() }
}

pub fn load_contracts(dir: &Path) -> Result<ContractSet> {
    let schema_path = dir.join(SCHEMA_FILE);
    let schema_text = std::fs::read_to_string(&schema_path)
        .map_err(|e| Error::io(schema_path.display().to_string(), e))?;
    let schema: ContractSchema = serde_json::from_str(&schema_text)
        .map_err(|e| parse_err(&schema_path, e.line() as u64, e.to_string()))?;
    schema.validate()?;

    let csv_path = dir.join(CONTRACTS_FILE);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&csv_path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                Error::io(csv_path.display().to_string(), std::io::Error::other(e.to_string()))
            }
            _ => parse_err(&csv_path, 1, e.to_string()),
        })?;
    let headers = rdr.headers().map_err(|e| parse_err(&csv_path, 1, e.to_string()))?.clone();
    let want: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    if headers.iter().ne(want.iter().copied()) {
        return Err(parse_err(
            &csv_path,
            1,
            format!("header {:?} does not match schema columns {want:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }

    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(&csv_path, 0, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != schema.columns.len() {
            return Err(parse_err(
                &csv_path,
                line,
                format!("expected {} fields, got {}", schema.columns.len(), rec.len()),
            ));
        }
        let mut categoricals = Vec::new();
        let mut numericals = Vec::new();
        let mut previous_class = 0u32;
        let mut target_class = 0u32;
        for (col, value) in schema.columns.iter().zip(rec.iter()) {
            match col.kind {
                ColumnKind::Categorical => categoricals.push(value.to_string()),
                ColumnKind::Numerical => numericals.push(value.parse::<f32>().map_err(|_| {
                    parse_err(&csv_path, line, format!("bad float {value:?} in column {:?}", col.name))
                })?),
                ColumnKind::PreviousClass => {
                    previous_class = value.parse().map_err(|_| {
                        parse_err(&csv_path, line, format!("bad class id {value:?} in {:?}", col.name))
                    })?
                }
                ColumnKind::TargetClass => {
                    target_class = value.parse().map_err(|_| {
                        parse_err(&csv_path, line, format!("bad class id {value:?} in {:?}", col.name))
                    })?
                }
            }
        }
        if previous_class as usize >= schema.n_classes || target_class as usize >= schema.n_classes {
            return Err(parse_err(
                &csv_path,
                line,
                format!("class id outside [0, {})", schema.n_classes),
            ));
        }
        records.push(ContractRecord { categoricals, numericals, previous_class, target_class });
    }
    ContractSet::new(schema, records)
}

pub fn save_contracts(dir: &Path, set: &ContractSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let schema_path = dir.join(SCHEMA_FILE);
    let schema_json = serde_json::to_string_pretty(&set.schema)
        .map_err(|e| Error::Config(format!("schema serialization: {e}")))?;
    std::fs::write(&schema_path, schema_json + "\n")
        .map_err(|e| Error::io(schema_path.display().to_string(), e))?;

    let csv_path = dir.join(CONTRACTS_FILE);
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| Error::io(csv_path.display().to_string(), std::io::Error::other(e.to_string())))?;
    let io_err =
        |e: csv::Error| Error::io(csv_path.display().to_string(), std::io::Error::other(e.to_string()));
    let header: Vec<&str> = set.schema.columns.iter().map(|c| c.name.as_str()).collect();
    w.write_record(&header).map_err(io_err)?;
    for r in &set.records {
        let mut cat = r.categoricals.iter();
        let mut num = r.numericals.iter();
        let mut row = Vec::with_capacity(set.schema.columns.len());
        for col in &set.schema.columns {
            row.push(match col.kind {
                ColumnKind::Categorical => cat.next().expect("validated").clone(),
                ColumnKind::Numerical => {
                    let v = *num.next().expect("validated");
                    let mut s = format!("{v}");
                    if !s.contains('.') && !s.contains('e') {
                        s.push_str(".0");
                    }
                    s
                }
                ColumnKind::PreviousClass => r.previous_class.to_string(),
                ColumnKind::TargetClass => r.target_class.to_string(),
            });
        }
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    Ok(())
}
