use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::{manifest, RAW_FEATURE_COUNT};

/// Traffic class of a packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    DDoS,
    BrowserHijacking,
    CommandInjection,
    XSS,
    BackdoorMalware,
    Unlabeled,
}

impl Label {
    /// The six labelled classes, in class-id order.
    pub const CLASSES: [Label; 6] = [
        Label::Normal,
        Label::DDoS,
        Label::BrowserHijacking,
        Label::CommandInjection,
        Label::XSS,
        Label::BackdoorMalware,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::DDoS => "DDoS",
            Label::BrowserHijacking => "BrowserHijacking",
            Label::CommandInjection => "CommandInjection",
            Label::XSS => "XSS",
            Label::BackdoorMalware => "BackdoorMalware",
            Label::Unlabeled => "Unlabeled",
        }
    }

    pub fn is_attack(self) -> bool {
        !matches!(self, Label::Normal | Label::Unlabeled)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::CLASSES
            .iter()
            .chain(std::iter::once(&Label::Unlabeled))
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// One raw feature value.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldValue {
    Missing,
    Num(f64),
    Cat(String),
}

impl FieldValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FieldValue::Num(v) => Some(*v),
            _ => None,
        }
    }
}

/// One parsed packet: the 71 manifest features plus flow index and label.
/// Payload bytes are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketRecord {
    pub timestamp: f64,
    pub flow_index: u32,
    pub label: Label,
    pub values: Vec<FieldValue>,
}

impl PacketRecord {
    pub fn empty(timestamp: f64, label: Label) -> Self {
        Self { timestamp, flow_index: 0, label, values: vec![FieldValue::Missing; RAW_FEATURE_COUNT] }
    }

    pub fn get(&self, name: &str) -> &FieldValue {
        &self.values[manifest().idx(name)]
    }

    pub fn num(&self, name: &str) -> Option<f64> {
        self.get(name).as_f64()
    }

    pub fn set(&mut self, name: &str, v: FieldValue) {
        self.values[manifest().idx(name)] = v;
    }

    pub fn set_num(&mut self, name: &str, v: f64) {
        self.set(name, FieldValue::Num(v));
    }

    fn num_u(&self, name: &str) -> Option<u32> {
        self.num(name).map(|v| v as u32)
    }

    pub fn eth_type(&self) -> Option<&str> {
        match self.get("eth_type") {
            FieldValue::Cat(s) => Some(s),
            _ => None,
        }
    }

    /// 4, 6, or `None` for non-IP frames.
    pub fn ip_version(&self) -> Option<u8> {
        self.num("ip_version").filter(|&v| v > 0.0).map(|v| v as u8)
    }

    pub fn ip_proto(&self) -> Option<u8> {
        self.num("ip_proto").map(|v| v as u8)
    }

    pub fn src_port(&self) -> Option<u16> {
        self.num("src_port").map(|v| v as u16)
    }

    pub fn dst_port(&self) -> Option<u16> {
        self.num("dst_port").map(|v| v as u16)
    }

    pub fn ttl(&self) -> Option<u8> {
        self.num("ttl").map(|v| v as u8)
    }

    pub fn tcp_flags(&self) -> Option<u8> {
        self.num("tcp_flags").map(|v| v as u8)
    }

    pub fn window_size(&self) -> Option<u32> {
        self.num_u("window_size")
    }

    pub fn ip_len(&self) -> Option<u32> {
        self.num_u("ip_len")
    }

    pub fn header_len(&self) -> Option<u32> {
        self.num_u("header_len")
    }

    pub fn payload_len(&self) -> Option<u32> {
        self.num_u("payload_len")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_parse_back() {
        for l in Label::CLASSES {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
        }
        assert!("Mirai".parse::<Label>().is_err());
        assert!(Label::XSS.is_attack() && !Label::Normal.is_attack());
    }
}
