//! Capture decoding into per-packet header records with flow indexing.

mod csvio;
mod flow;
mod manifest;
pub mod pcap;
mod record;

use thiserror::Error;

pub use csvio::{header as csv_header, read_records, read_records_file, render_value, write_records, write_records_file};
pub use flow::{assign_flow, Endpoint, FiveTuple, FlowAssignment, FlowTable};
pub use manifest::{manifest, FeatureKind, FeatureManifest, FeatureSpec, Layer, RAW_FEATURE_COUNT};
pub use pcap::{derive_flow_features, parse_pcap, parse_pcap_bytes, ParsedCapture};
pub use record::{FieldValue, Label, PacketRecord, UnknownLabel};

#[derive(Debug, Error)]
pub enum PacketError {
    #[error("malformed capture: {0}")]
    MalformedCapture(String),
    #[error("bad packet CSV: {0}")]
    BadCsv(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads packets from a `.pcap` capture or a packet CSV, by extension.
pub fn load_packets(path: &std::path::Path, label: Option<Label>) -> Result<Vec<PacketRecord>, PacketError> {
    let is_pcap = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pcap"));
    if is_pcap {
        Ok(parse_pcap(path, label)?.records)
    } else {
        read_records_file(path)
    }
}
