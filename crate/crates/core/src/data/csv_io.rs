//! CSV ingestion and export.
//!
//! Fixed schemas, UTF-8, mandatory header row, `.` decimal separator:
//!
//! - `dealers.csv`: `dealer_id, f0..f{U-1}`
//! - `vehicles.csv`: `vehicle_id, f0..f{F-1}`
//! - `interactions.csv`: `dealer_id, vehicle_id, timestamp, relation`
//!   with relation literally `purchase` or `bid`.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Dataset, DealerRecord, Interaction, Relation, VehicleRecord};

pub const DEALERS_FILE: &str = "dealers.csv";
pub const VEHICLES_FILE: &str = "vehicles.csv";
pub const INTERACTIONS_FILE: &str = "interactions.csv";

fn parse_err(path: &Path, line: u64, detail: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, detail: detail.into() }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path.display().to_string(),
                std::io::Error::other(e.to_string()),
            ),
            _ => parse_err(path, 1, e.to_string()),
        })
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Entity table loader shared by dealers and vehicles.
fn load_entities(path: &Path, id_column: &str) -> Result<Vec<(u32, Vec<f32>)>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    if headers.get(0) != Some(id_column) {
        return Err(parse_err(
            path,
            1,
            format!("first column must be {id_column:?}, got {:?}", headers.get(0)),
        ));
    }
    for (i, h) in headers.iter().enumerate().skip(1) {
        let want = format!("f{}", i - 1);
        if h != want {
            return Err(parse_err(path, 1, format!("column {i} must be {want:?}, got {h:?}")));
        }
    }
    let width = headers.len() - 1;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = record_line(&rec);
        if rec.len() != width + 1 {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", width + 1, rec.len())));
        }
        let id: u32 = rec[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad id {:?}", &rec[0])))?;
        let mut feats = Vec::with_capacity(width);
        for j in 1..rec.len() {
            let v: f32 = rec[j]
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad float {:?} in column f{}", &rec[j], j - 1)))?;
            feats.push(v);
        }
        out.push((id, feats));
    }
    Ok(out)
}

/// Load and validate a dataset directory containing the three CSV files.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let dealers_path = dir.join(DEALERS_FILE);
    let vehicles_path = dir.join(VEHICLES_FILE);
    let interactions_path = dir.join(INTERACTIONS_FILE);

    let dealers: Vec<DealerRecord> = load_entities(&dealers_path, "dealer_id")?
        .into_iter()
        .map(|(dealer_id, features)| DealerRecord { dealer_id, features })
        .collect();
    let vehicles: Vec<VehicleRecord> = load_entities(&vehicles_path, "vehicle_id")?
        .into_iter()
        .map(|(vehicle_id, features)| VehicleRecord { vehicle_id, features })
        .collect();

    let dealer_ids: HashSet<u32> = dealers.iter().map(|d| d.dealer_id).collect();
    let vehicle_ids: HashSet<u32> = vehicles.iter().map(|v| v.vehicle_id).collect();

    let mut rdr = reader(&interactions_path)?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(&interactions_path, 1, e.to_string()))?
        .clone();
    let want = ["dealer_id", "vehicle_id", "timestamp", "relation"];
    if headers.iter().ne(want) {
        return Err(parse_err(
            &interactions_path,
            1,
            format!("header must be {want:?}, got {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }
    let mut interactions = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(&interactions_path, 0, e.to_string()))?;
        let line = record_line(&rec);
        if rec.len() != 4 {
            return Err(parse_err(&interactions_path, line, format!("expected 4 fields, got {}", rec.len())));
        }
        let dealer_id: u32 = rec[0]
            .parse()
            .map_err(|_| parse_err(&interactions_path, line, format!("bad dealer_id {:?}", &rec[0])))?;
        let vehicle_id: u32 = rec[1]
            .parse()
            .map_err(|_| parse_err(&interactions_path, line, format!("bad vehicle_id {:?}", &rec[1])))?;
        let timestamp: i64 = rec[2]
            .parse()
            .map_err(|_| parse_err(&interactions_path, line, format!("bad timestamp {:?}", &rec[2])))?;
        let relation = Relation::parse(&rec[3]).ok_or_else(|| {
            parse_err(
                &interactions_path,
                line,
                format!("relation must be \"purchase\" or \"bid\", got {:?}", &rec[3]),
            )
        })?;
        if !dealer_ids.contains(&dealer_id) {
            return Err(Error::MissingId {
                path: interactions_path.display().to_string(),
                line,
                detail: format!("dealer {dealer_id} not present in {DEALERS_FILE}"),
            });
        }
        if !vehicle_ids.contains(&vehicle_id) {
            return Err(Error::MissingId {
                path: interactions_path.display().to_string(),
                line,
                detail: format!("vehicle {vehicle_id} not present in {VEHICLES_FILE}"),
            });
        }
        interactions.push(Interaction { dealer_id, vehicle_id, timestamp, relation });
    }

    Dataset::new(dealers, vehicles, interactions)
}

/// Write the three CSV files; output bytes are a pure function of the dataset.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write_entities = |file: &str, id_col: &str, rows: &mut dyn Iterator<Item = (u32, &[f32])>, width: usize| -> Result<()> {
        let path = dir.join(file);
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
        let io_err = |e: csv::Error| Error::io(path.display().to_string(), std::io::Error::other(e.to_string()));
        let mut header = vec![id_col.to_string()];
        header.extend((0..width).map(|i| format!("f{i}")));
        w.write_record(&header).map_err(io_err)?;
        for (id, feats) in rows {
            let mut rec = Vec::with_capacity(width + 1);
            rec.push(id.to_string());
            rec.extend(feats.iter().map(|v| format_f32(*v)));
            w.write_record(&rec).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    };

    write_entities(
        DEALERS_FILE,
        "dealer_id",
        &mut ds.dealers.iter().map(|d| (d.dealer_id, d.features.as_slice())),
        ds.dealer_feature_dim(),
    )?;
    write_entities(
        VEHICLES_FILE,
        "vehicle_id",
        &mut ds.vehicles.iter().map(|v| (v.vehicle_id, v.features.as_slice())),
        ds.vehicle_feature_dim(),
    )?;

    let path = dir.join(INTERACTIONS_FILE);
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
    let io_err = |e: csv::Error| Error::io(path.display().to_string(), std::io::Error::other(e.to_string()));
    w.write_record(["dealer_id", "vehicle_id", "timestamp", "relation"]).map_err(io_err)?;
    for it in &ds.interactions {
        w.write_record([
            it.dealer_id.to_string(),
            it.vehicle_id.to_string(),
            it.timestamp.to_string(),
            it.relation.as_str().to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Shortest representation that round-trips; `.` decimal separator.
fn format_f32(v: f32) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}
