//! Object profiler: turns a trace into a labeled dataset.
//!
//! Types are recorded at allocation sites; content is dumped at free sites
//! and labeled with the recorded type plus a compartment flag. Collection
//! spans the whole trace, not just the compartment, to keep the training
//! set rich.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtree::extract_features;
use crate::model::{CompartmentSpec, EventKind, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub words: Vec<u64>,
    pub type_id: u64,
    pub in_compartment: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub feature_words: usize,
    /// Hash of the source trace file; informational, not round-tripped.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source_hash: String,
    pub class_histogram: BTreeMap<u64, usize>,
}

/// Labeled rows plus collection metadata.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
    pub meta: DatasetMeta,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Dataset {
    /// Row-level equality; the source hash is advisory.
    pub fn same_rows(&self, other: &Dataset) -> bool {
        self.rows == other.rows && self.meta.feature_words == other.meta.feature_words
    }

    fn rebuild_histogram(&mut self) {
        self.meta.class_histogram.clear();
        for row in &self.rows {
            *self.meta.class_histogram.entry(row.type_id).or_default() += 1;
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: {msg}")]
    Field { line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds the dataset: every free whose address matches a recorded
/// allocation contributes one row. Frees without content are skipped with
/// a warning.
pub fn profile_trace(trace: &[TraceEvent], spec: &CompartmentSpec, feature_words: usize) -> Dataset {
    let mut live: BTreeMap<u64, u64> = BTreeMap::new(); // addr -> type
    let mut ds = Dataset { meta: DatasetMeta { feature_words, ..Default::default() }, ..Default::default() };
    for ev in trace {
        match ev.kind {
            EventKind::Alloc => {
                live.insert(ev.addr.unwrap(), ev.type_id.unwrap());
            }
            EventKind::Free => {
                let addr = ev.addr.unwrap();
                let Some(type_id) = live.remove(&addr) else {
                    ds.warnings.push(format!("tick {}: free at {addr:#x} without a recorded allocation", ev.tick));
                    continue;
                };
                let Some(payload) = ev.payload.as_deref() else {
                    ds.warnings.push(format!("tick {}: free at {addr:#x} carries no content; row skipped", ev.tick));
                    continue;
                };
                ds.rows.push(DatasetRow {
                    words: extract_features(payload, feature_words),
                    type_id,
                    in_compartment: spec.is_compartment_type(type_id),
                });
            }
            _ => {}
        }
    }
    ds.rebuild_histogram();
    ds
}

/// Writes `.o2cdata.csv`: header `w0..w{L-1},type_id,in_compartment`, words
/// as decimal.
pub fn export_dataset<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let l = ds.meta.feature_words;
    let mut header: Vec<String> = (0..l).map(|i| format!("w{i}")).collect();
    header.push("type_id".into());
    header.push("in_compartment".into());
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(l + 2);
    for row in &ds.rows {
        record.clear();
        record.extend(row.words.iter().map(u64::to_string));
        record.push(row.type_id.to_string());
        record.push(if row.in_compartment { "1".into() } else { "0".into() });
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `.o2cdata.csv` back; the header pins the expected feature length.
pub fn import_dataset<R: BufRead>(reader: R) -> Result<Dataset, DatasetError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = r.headers()?.clone();
    let n = headers.len();
    if n < 3 {
        return Err(DatasetError::Header {
            expected: "w0..w{L-1},type_id,in_compartment".into(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let l = n - 2;
    for (i, name) in headers.iter().take(l).enumerate() {
        if name != format!("w{i}") {
            return Err(DatasetError::Header { expected: format!("w{i}"), found: name.to_string() });
        }
    }
    if &headers[l] != "type_id" || &headers[l + 1] != "in_compartment" {
        return Err(DatasetError::Header {
            expected: "type_id,in_compartment".into(),
            found: format!("{},{}", &headers[l], &headers[l + 1]),
        });
    }

    let mut ds = Dataset { meta: DatasetMeta { feature_words: l, ..Default::default() }, ..Default::default() };
    for (idx, record) in r.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record?;
        if record.len() != n {
            return Err(DatasetError::ColumnCount { line, expected: n, found: record.len() });
        }
        let parse = |s: &str| -> Result<u64, DatasetError> {
            s.parse::<u64>().map_err(|e| DatasetError::Field { line, msg: format!("`{s}`: {e}") })
        };
        let mut words = Vec::with_capacity(l);
        for i in 0..l {
            words.push(parse(&record[i])?);
        }
        let type_id = parse(&record[l])?;
        let in_compartment = match &record[l + 1] {
            "0" => false,
            "1" => true,
            other => return Err(DatasetError::Field { line, msg: format!("bad flag `{other}`") }),
        };
        ds.rows.push(DatasetRow { words, type_id, in_compartment });
    }
    ds.rebuild_histogram();
    Ok(ds)
}
