//! One-packet-per-line text rendering.

use crate::numfmt::{lossless, round_sig6, sig6};
use crate::packet::{manifest, FeatureKind, FieldValue, PacketRecord};

use super::bpe::Special;
use super::TextError;

const MISSING: &str = "none";

/// Six significant digits when that is exact, otherwise the shortest
/// lossless form, so distinct values never render alike.
pub fn render_number(v: f64) -> String {
    if round_sig6(v) == v {
        sig6(v)
    } else {
        lossless(v)
    }
}

fn render_field(v: &FieldValue) -> String {
    match v {
        FieldValue::Missing => MISSING.to_string(),
        FieldValue::Num(x) => render_number(*x),
        FieldValue::Cat(s) => s.clone(),
    }
}

/// Resolves column names to manifest indices, in manifest order.
pub fn column_indices(selected: &[String]) -> Result<Vec<usize>, TextError> {
    let m = manifest();
    let mut idx = selected
        .iter()
        .map(|n| m.index_of(n).ok_or_else(|| TextError::UnknownColumn(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

/// `name=value` pairs joined by single spaces, no trailing newline.
pub fn packet_line(record: &PacketRecord, columns: &[usize]) -> String {
    let m = manifest();
    let mut out = String::new();
    for (k, &c) in columns.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        out.push_str(&m.features()[c].name);
        out.push('=');
        out.push_str(&render_field(&record.values[c]));
    }
    out
}

/// Flow text: a begin marker line, one line per packet, an end marker line.
pub fn serialize_flow(records: &[PacketRecord], selected: &[String]) -> Result<String, TextError> {
    let columns = column_indices(selected)?;
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| r.flow_index != first.flow_index) {
            return Err(TextError::MixedFlows(first.flow_index, other.flow_index));
        }
    }
    let mut out = String::new();
    out.push_str(Special::FlowBegin.marker());
    out.push('\n');
    for r in records {
        out.push_str(&packet_line(r, &columns));
        out.push('\n');
    }
    out.push_str(Special::FlowEnd.marker());
    out.push('\n');
    Ok(out)
}

/// Strict inverse of [`packet_line`]: every column present, in order.
/// Returns values aligned with `columns`.
pub fn parse_line(line: &str, columns: &[usize]) -> Result<Vec<FieldValue>, TextError> {
    let m = manifest();
    let bad = |why: &str| TextError::BadLine(format!("{why}: {line:?}"));
    let parts: Vec<&str> = if line.is_empty() { Vec::new() } else { line.split(' ').collect() };
    if parts.len() != columns.len() {
        return Err(bad(&format!("expected {} fields, found {}", columns.len(), parts.len())));
    }
    let mut out = Vec::with_capacity(columns.len());
    for (part, &c) in parts.iter().zip(columns) {
        let spec = &m.features()[c];
        let value = part
            .strip_prefix(spec.name.as_str())
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| bad(&format!("expected field {}", spec.name)))?;
        let v = if value == MISSING {
            FieldValue::Missing
        } else {
            match spec.kind {
                FeatureKind::Categorical if !value.is_empty() => FieldValue::Cat(value.to_string()),
                FeatureKind::Categorical => return Err(bad("empty category")),
                FeatureKind::Numeric => {
                    let x: f64 = value.parse().map_err(|_| bad(&format!("bad number {value:?}")))?;
                    if !x.is_finite() {
                        return Err(bad("non-finite number"));
                    }
                    FieldValue::Num(x)
                }
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Parses a line into a record holding only the given columns; the rest stay
/// missing.
pub fn parse_packet(line: &str, columns: &[usize]) -> Result<PacketRecord, TextError> {
    let values = parse_line(line, columns)?;
    let mut r = PacketRecord::empty(0.0, crate::packet::Label::Unlabeled);
    for (v, &c) in values.into_iter().zip(columns) {
        r.values[c] = v;
    }
    Ok(r)
}
