//! Training metrics CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dal_core::{DalError, Result};

pub const METRICS_HEADER: [&str; 6] = ["iter", "loss_I", "loss_C", "loss_total", "assoc_rate", "true_match_rate"];

/// One metrics row. Loss columns are empty for the pre-training row and
/// `true_match_rate` is empty while nothing is merged or labels are absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub loss_intra: Option<f64>,
    pub loss_cross: Option<f64>,
    pub loss_total: Option<f64>,
    pub assoc_rate: f64,
    pub true_match_rate: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str, row: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| DalError::BadMetrics { row, message: format!("not a number: {s:?}") })
}

impl MetricsRow {
    fn fields(&self) -> [String; 6] {
        [
            self.iter.to_string(),
            opt(self.loss_intra),
            opt(self.loss_cross),
            opt(self.loss_total),
            self.assoc_rate.to_string(),
            opt(self.true_match_rate),
        ]
    }
}

pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    /// Creates `path` holding the header followed by `existing` rows.
    pub fn create(path: &Path, existing: &[MetricsRow]) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        inner.write_record(METRICS_HEADER)?;
        for r in existing {
            inner.write_record(r.fields())?;
        }
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.fields())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| e.into_error())?.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(DalError::BadMetrics { row: 0, message: format!("unexpected metrics header {header:?}") });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let iter = rec[0]
            .parse()
            .map_err(|_| DalError::BadMetrics { row, message: format!("bad iteration {:?}", &rec[0]) })?;
        rows.push(MetricsRow {
            iter,
            loss_intra: parse_opt(&rec[1], row)?,
            loss_cross: parse_opt(&rec[2], row)?,
            loss_total: parse_opt(&rec[3], row)?,
            assoc_rate: parse_opt(&rec[4], row)?
                .ok_or_else(|| DalError::BadMetrics { row, message: "missing assoc_rate".into() })?,
            true_match_rate: parse_opt(&rec[5], row)?,
        });
    }
    Ok(rows)
}
