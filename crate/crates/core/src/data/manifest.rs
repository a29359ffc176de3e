//! Manifest CSV: `frame_id,tracklet_index,camera_id[,identity_id]`, one row
//! per feature row, in feature-row order.

use std::path::Path;

use crate::error::{DalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestRow {
    pub frame_id: u64,
    pub tracklet_index: usize,
    pub camera_id: usize,
    pub identity_id: Option<u64>,
}

const BASE_HEADER: [&str; 3] = ["frame_id", "tracklet_index", "camera_id"];

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let labelled = match cols.as_slice() {
        [a, b, c] if [*a, *b, *c] == BASE_HEADER => false,
        [a, b, c, "identity_id"] if [*a, *b, *c] == BASE_HEADER => true,
        _ => return Err(DalError::BadManifest { row: 0, message: format!("unexpected header {:?}", cols.join(",")) }),
    };
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |col: usize| -> Result<u64> {
            let raw = rec.get(col).unwrap_or("").trim();
            raw.parse::<u64>().map_err(|_| DalError::BadManifest {
                row: i,
                message: format!("column {} is not a non-negative integer: {raw:?}", header.get(col).unwrap_or("?")),
            })
        };
        rows.push(ManifestRow {
            frame_id: field(0)?,
            tracklet_index: field(1)? as usize,
            camera_id: field(2)? as usize,
            identity_id: if labelled { Some(field(3)?) } else { None },
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let labelled = rows.first().is_some_and(|r| r.identity_id.is_some());
    let mut w = csv::Writer::from_path(path)?;
    if labelled {
        w.write_record(BASE_HEADER.iter().chain(&["identity_id"]))?;
    } else {
        w.write_record(BASE_HEADER)?;
    }
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![r.frame_id.to_string(), r.tracklet_index.to_string(), r.camera_id.to_string()];
        if labelled {
            let id = r.identity_id.ok_or(DalError::BadManifest {
                row: i,
                message: "identity_id must be present on every row or none".into(),
            })?;
            rec.push(id.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
