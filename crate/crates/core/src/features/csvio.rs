//! Scaled feature tables as CSV: selected columns, then `flow_index,label`.

use std::path::Path;

use super::{FeatureError, FeatureMatrix};
use crate::packet::Label;

pub fn write_matrix_csv(path: &Path, m: &FeatureMatrix) -> Result<(), FeatureError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = m.column_names.clone();
    header.push("flow_index".into());
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..m.rows() {
        // `{}` on f64 is the shortest string that parses back exactly.
        let mut row: Vec<String> = m.row(i).iter().map(|x| format!("{x}")).collect();
        row.push(m.flows[i].to_string());
        row.push(m.labels[i].as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<FeatureMatrix, FeatureError> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let n = header.len();
    if n < 2 || header[n - 2] != "flow_index" || header[n - 1] != "label" {
        return Err(FeatureError::ShapeMismatch("feature CSV must end with flow_index,label".into()));
    }
    let cols = n - 2;
    let (mut data, mut labels, mut flows) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| FeatureError::ShapeMismatch(format!("row {}: bad {what}", line + 1));
        for j in 0..cols {
            data.push(rec[j].parse::<f64>().map_err(|_| bad(&header[j]))?);
        }
        flows.push(rec[cols].parse::<u32>().map_err(|_| bad("flow_index"))?);
        labels.push(rec[cols + 1].parse::<Label>().map_err(|_| bad("label"))?);
    }
    FeatureMatrix::new(header[..cols].to_vec(), data, labels, flows)
}
