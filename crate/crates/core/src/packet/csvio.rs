//! Packet CSV: one header row in manifest order, then `flow_index,label`.

use std::io::{Read, Write};
use std::path::Path;

use super::manifest::{manifest, FeatureKind};
use super::record::{FieldValue, Label, PacketRecord};
use super::PacketError;
use crate::numfmt;

pub const FLOW_INDEX_COLUMN: &str = "flow_index";
pub const LABEL_COLUMN: &str = "label";

pub fn header() -> Vec<String> {
    let mut h: Vec<String> = manifest().names().map(str::to_string).collect();
    h.push(FLOW_INDEX_COLUMN.to_string());
    h.push(LABEL_COLUMN.to_string());
    h
}

pub fn render_value(v: &FieldValue) -> String {
    match v {
        FieldValue::Missing => String::new(),
        FieldValue::Num(x) => numfmt::lossless(*x),
        FieldValue::Cat(s) => s.clone(),
    }
}

pub fn write_records<W: Write>(out: W, records: &[PacketRecord]) -> Result<(), PacketError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for r in records {
        let mut row: Vec<String> = r.values.iter().map(render_value).collect();
        row.push(r.flow_index.to_string());
        row.push(r.label.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_file(path: &Path, records: &[PacketRecord]) -> Result<(), PacketError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_records(std::fs::File::create(path)?, records)
}

/// Reads a packet CSV. Timestamps are rebuilt as the running sum of `iat`.
pub fn read_records<R: Read>(input: R) -> Result<Vec<PacketRecord>, PacketError> {
    let mut rd = csv::Reader::from_reader(input);
    let expected = header();
    let got: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(PacketError::BadCsv(format!(
            "header does not match the feature manifest (got {} columns, expected {})",
            got.len(),
            expected.len()
        )));
    }
    let m = manifest();
    let iat_idx = m.idx("iat");
    let mut records = Vec::new();
    let mut clock = 0.0;
    for (line, row) in rd.records().enumerate() {
        let row = row?;
        let mut values = Vec::with_capacity(m.len());
        for (k, spec) in m.features().iter().enumerate() {
            let cell = &row[k];
            let v = if cell.is_empty() {
                FieldValue::Missing
            } else if spec.kind == FeatureKind::Categorical {
                FieldValue::Cat(cell.to_string())
            } else {
                FieldValue::Num(cell.parse().map_err(|_| {
                    PacketError::BadCsv(format!("row {}: {} = {cell:?} is not numeric", line + 2, spec.name))
                })?)
            };
            values.push(v);
        }
        let flow_index = row[m.len()]
            .parse()
            .map_err(|_| PacketError::BadCsv(format!("row {}: bad flow_index", line + 2)))?;
        let label: Label = row[m.len() + 1].parse().map_err(|e: super::record::UnknownLabel| PacketError::BadCsv(e.to_string()))?;
        clock += values[iat_idx].as_f64().unwrap_or(0.0);
        records.push(PacketRecord { timestamp: clock, flow_index, label, values });
    }
    Ok(records)
}

pub fn read_records_file(path: &Path) -> Result<Vec<PacketRecord>, PacketError> {
    read_records(std::fs::File::open(path)?)
}
