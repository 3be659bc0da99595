//! Deterministic synthetic IoT traffic with a known next-packet function.
//!
//! Every flow follows one traffic profile. Packet `j` of a flow is fully
//! determined by the profile, `j`, the flow length and two flow constants
//! (TTL and source port), and the flow length is itself a function of the
//! profile and TTL. Each (profile, position) pair carries a distinct TCP
//! window (or UDP length), so the current packet always identifies its
//! successor.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::packet::{derive_flow_features, manifest, FieldValue, Label, PacketRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid grammar: {0}")]
    InvalidSpec(String),
    #[error("packet does not belong to the grammar: {0}")]
    NotInGrammar(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const TTLS: [u8; 3] = [64, 128, 255];
pub const SRC_PORTS: [u16; 4] = [50123, 51877, 53510, 60042];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Proto {
    Tcp,
    Udp,
}

/// One traffic shape. TCP profiles may open with SYN/ACK and close with
/// FIN/ACK; body packets carry `body_flags` and a payload growing with the
/// position.
#[derive(Clone, Debug)]
pub struct Profile {
    pub name: &'static str,
    pub label: Label,
    pub proto: Proto,
    pub dst_port: u16,
    pub base_len: usize,
    pub handshake: bool,
    pub fin: bool,
    pub body_flags: u8,
    pub payload_base: usize,
    pub payload_step: usize,
    pub window_base: u16,
    /// Seconds between body packets.
    pub body_iat: f64,
    pub dst_private: bool,
}

const WINDOW_STEP: u16 = 97;

pub fn profiles() -> &'static [Profile] {
    use Label::*;
    const P: &[Profile] = &[
        Profile { name: "mqtt", label: Normal, proto: Proto::Tcp, dst_port: 1883, base_len: 6, handshake: true, fin: true, body_flags: 0x18, payload_base: 24, payload_step: 8, window_base: 29200, body_iat: 0.5, dst_private: true },
        Profile { name: "coap", label: Normal, proto: Proto::Udp, dst_port: 5683, base_len: 4, handshake: false, fin: false, body_flags: 0, payload_base: 18, payload_step: 6, window_base: 0, body_iat: 1.0, dst_private: true },
        Profile { name: "mqtts", label: Normal, proto: Proto::Tcp, dst_port: 8883, base_len: 7, handshake: true, fin: true, body_flags: 0x18, payload_base: 64, payload_step: 16, window_base: 40960, body_iat: 0.25, dst_private: true },
        Profile { name: "syn_flood", label: DDoS, proto: Proto::Tcp, dst_port: 80, base_len: 8, handshake: false, fin: false, body_flags: 0x02, payload_base: 0, payload_step: 0, window_base: 1024, body_iat: 0.0001, dst_private: false },
        Profile { name: "hijack", label: BrowserHijacking, proto: Proto::Tcp, dst_port: 8080, base_len: 6, handshake: true, fin: true, body_flags: 0x18, payload_base: 420, payload_step: 36, window_base: 16384, body_iat: 0.05, dst_private: false },
        Profile { name: "cmd_inject", label: CommandInjection, proto: Proto::Tcp, dst_port: 8000, base_len: 5, handshake: true, fin: true, body_flags: 0x38, payload_base: 180, payload_step: 20, window_base: 8192, body_iat: 0.02, dst_private: false },
        Profile { name: "xss", label: XSS, proto: Proto::Tcp, dst_port: 8443, base_len: 6, handshake: true, fin: true, body_flags: 0x18, payload_base: 900, payload_step: 60, window_base: 12288, body_iat: 0.03, dst_private: false },
        Profile { name: "backdoor", label: BackdoorMalware, proto: Proto::Tcp, dst_port: 4444, base_len: 6, handshake: false, fin: false, body_flags: 0x18, payload_base: 12, payload_step: 4, window_base: 512, body_iat: 5.0, dst_private: false },
    ];
    P
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub seed: u64,
    /// Fraction of flows per class; must cover all six classes and sum to 1.
    pub class_mix: BTreeMap<Label, f64>,
    /// Idle seconds between consecutive flows.
    pub flow_gap: f64,
    /// Fields in which every benign profile must differ from every attack
    /// profile.
    pub min_separation: usize,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        Self::with_attack_fraction(42, 0.2)
    }
}

impl GrammarSpec {
    /// Normal gets `1 − attack`, the five attack classes share `attack`
    /// equally.
    pub fn with_attack_fraction(seed: u64, attack: f64) -> Self {
        let mut class_mix = BTreeMap::new();
        for l in Label::CLASSES {
            class_mix.insert(l, if l == Label::Normal { 1.0 - attack } else { attack / 5.0 });
        }
        Self { seed, class_mix, flow_gap: 0.5, min_separation: 2 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let total: f64 = self.class_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 || self.class_mix.values().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(SynthError::InvalidSpec(format!("class mix must be fractions summing to 1, got {total}")));
        }
        if self.class_mix.contains_key(&Label::Unlabeled) {
            return Err(SynthError::InvalidSpec("Unlabeled is not a generated class".into()));
        }
        if !(self.flow_gap > 0.0) {
            return Err(SynthError::InvalidSpec("flow_gap must be positive".into()));
        }
        let sep = separation();
        if sep < self.min_separation {
            return Err(SynthError::InvalidSpec(format!("profiles differ in {sep} fields, need {}", self.min_separation)));
        }
        Ok(())
    }
}

/// Number of fields whose benign and attack value sets are disjoint.
pub fn separation() -> usize {
    let m = manifest();
    let (benign, attack): (Vec<_>, Vec<_>) = profiles().iter().partition(|p| p.label == Label::Normal);
    let values = |ps: &[&Profile], col: usize| -> Vec<String> {
        let mut v: Vec<String> = ps
            .iter()
            .flat_map(|p| (0..p.base_len).map(move |j| packet(p, j, p.base_len, 0, 0).values[col].clone()))
            .map(|f| format!("{f:?}"))
            .collect();
        v.sort();
        v.dedup();
        v
    };
    (0..m.len())
        .filter(|&c| {
            let b = values(&benign, c);
            let a = values(&attack, c);
            !b.iter().any(|x| a.contains(x))
        })
        .count()
}

fn payload(p: &Profile, j: usize, len: usize) -> usize {
    let open = p.handshake && j < 2;
    let close = p.fin && j + 1 == len;
    if open || close {
        0
    } else {
        p.payload_base + p.payload_step * j
    }
}

fn flags(p: &Profile, j: usize, len: usize) -> u8 {
    if p.handshake && j == 0 {
        0x02
    } else if p.handshake && j == 1 {
        0x10
    } else if p.fin && j + 1 == len {
        0x11
    } else {
        p.body_flags
    }
}

fn iat(p: &Profile, j: usize, len: usize) -> f64 {
    if p.handshake && j == 1 {
        0.0004
    } else if p.fin && j + 1 == len {
        0.001
    } else {
        p.body_iat
    }
}

fn flow_len(p: &Profile, ttl_idx: usize) -> usize {
    p.base_len + ttl_idx
}

/// Packet `j` of a flow of length `len`. Timing fields hold within-flow
/// values; `iat` of the first packet is filled in by the generator.
fn packet(p: &Profile, j: usize, len: usize, ttl_idx: usize, port_idx: usize) -> PacketRecord {
    let mut r = PacketRecord::empty(0.0, p.label);
    let f = |v: bool| if v { 1.0 } else { 0.0 };
    let pay = payload(p, j, len);
    let syn = p.proto == Proto::Tcp && flags(p, j, len) & 0x02 != 0;
    let opts = if syn && p.handshake { 12 } else { 0 };
    let l4 = match p.proto {
        Proto::Tcp => 20 + opts,
        Proto::Udp => 8,
    };
    let ip_len = 20 + l4 + pay;
    let frame = 14 + ip_len;
    for (name, v) in [
        ("frame_len", frame as f64),
        ("wire_len", frame as f64),
        ("truncated", 0.0),
        ("eth_dst_broadcast", 0.0),
        ("eth_dst_multicast", 0.0),
        ("eth_src_local", 0.0),
        ("vlan_present", 0.0),
        ("vlan_id", 0.0),
        ("l2_header_len", 14.0),
        ("ip_version", 4.0),
        ("ip_header_len", 20.0),
        ("ip_dscp", 0.0),
        ("ip_ecn", 0.0),
        ("ip_len", ip_len as f64),
        ("ip_id", 0.0),
        ("ip_flag_df", 1.0),
        ("ip_flag_mf", 0.0),
        ("ip_frag_offset", 0.0),
        ("ttl", TTLS[ttl_idx] as f64),
        ("ip_proto", if p.proto == Proto::Tcp { 6.0 } else { 17.0 }),
        ("ip_checksum", 0.0),
        ("ip_options_len", 0.0),
        ("ip_src_private", 1.0),
        ("ip_dst_private", f(p.dst_private)),
        ("ip_dst_multicast", 0.0),
        ("ip_dst_broadcast", 0.0),
        ("ip_src_loopback", 0.0),
        ("l3_header_len", 20.0),
        ("src_port", SRC_PORTS[port_idx] as f64),
        ("dst_port", p.dst_port as f64),
        ("src_port_class", 2.0),
        ("dst_port_class", if p.dst_port < 1024 { 0.0 } else { 1.0 }),
        ("l4_header_len", l4 as f64),
        ("is_tcp", f(p.proto == Proto::Tcp)),
        ("is_udp", f(p.proto == Proto::Udp)),
        ("is_icmp", 0.0),
        ("header_len", (14 + 20 + l4) as f64),
        ("payload_len", pay as f64),
        ("payload_ratio", (pay as f64 / frame as f64 * 1e4).round() / 1e4),
        ("direction", 0.0),
        ("flow_pkt_seq", (j + 1) as f64),
        ("flow_bytes", (0..=j).map(|i| 14 + 20 + tcp_or_udp_len(p, i, len) + payload(p, i, len)).sum::<usize>() as f64),
        ("flow_iat", if j == 0 { 0.0 } else { iat(p, j, len) }),
        ("iat", if j == 0 { 0.0 } else { iat(p, j, len) }),
    ] {
        r.set_num(name, v);
    }
    r.set("eth_type", FieldValue::Cat("ipv4".into()));
    match p.proto {
        Proto::Tcp => {
            let fl = flags(p, j, len);
            let seq = if p.handshake && j == 0 { 0 } else { 1 + (0..j).map(|i| payload(p, i, len)).sum::<usize>() };
            for (name, v) in [
                ("tcp_seq", seq as f64),
                ("tcp_ack", f(fl & 0x10 != 0)),
                ("tcp_data_offset", l4 as f64),
                ("tcp_flags", fl as f64),
                ("window_size", (p.window_base + WINDOW_STEP * j as u16) as f64),
                ("tcp_urgent_ptr", if fl & 0x20 != 0 { pay as f64 } else { 0.0 }),
                ("tcp_options_len", opts as f64),
                ("tcp_opt_mss", if opts > 0 { 1460.0 } else { 0.0 }),
                ("tcp_opt_wscale", if opts > 0 { 7.0 } else { 0.0 }),
                ("tcp_opt_sack_perm", f(opts > 0)),
                ("tcp_opt_timestamp", 0.0),
            ] {
                r.set_num(name, v);
            }
            for (bit, name) in ["fin", "syn", "rst", "psh", "ack", "urg", "ece", "cwr"].iter().enumerate() {
                r.set_num(&format!("tcp_flag_{name}"), f(fl & (1 << bit) != 0));
            }
        }
        Proto::Udp => {
            r.set_num("udp_len", (8 + pay) as f64);
            r.set_num("udp_checksum_zero", 0.0);
        }
    }
    r
}

fn tcp_or_udp_len(p: &Profile, j: usize, len: usize) -> usize {
    match p.proto {
        Proto::Tcp if p.handshake && flags(p, j, len) & 0x02 != 0 => 32,
        Proto::Tcp => 20,
        Proto::Udp => 8,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthFlow {
    pub flow_index: u32,
    pub label: Label,
    pub profile: String,
    /// Index of the first packet in the record table.
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NextPacket {
    Packet(PacketRecord),
    FlowEnd,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub spec: GrammarSpec,
    pub records: Vec<PacketRecord>,
    pub flows: Vec<SynthFlow>,
}

/// Exact per-class flow counts: floors of `mix · n`, remainders handed out
/// by largest fractional part (ties to the earlier class).
fn quotas(mix: &BTreeMap<Label, f64>, n: usize) -> Vec<(Label, usize)> {
    let mut q: Vec<(Label, usize, f64)> = mix
        .iter()
        .map(|(&l, &f)| {
            let exact = f * n as f64;
            (l, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = q.iter().map(|x| x.1).sum();
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].2.total_cmp(&q[a].2).then(a.cmp(&b)));
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        q[k].1 += 1;
    }
    q.into_iter().map(|(l, c, _)| (l, c)).collect()
}

/// `n_flows` flows, laid out one after another in time.
pub fn generate(spec: &GrammarSpec, n_flows: usize) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    if n_flows == 0 {
        return Err(SynthError::InvalidSpec("n_flows must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut classes: Vec<Label> = quotas(&spec.class_mix, n_flows)
        .into_iter()
        .flat_map(|(l, c)| std::iter::repeat(l).take(c))
        .collect();
    classes.shuffle(&mut rng);

    let mut records = Vec::new();
    let mut flows = Vec::with_capacity(n_flows);
    // Timestamps are kept in integer microseconds to avoid drift.
    let mut clock_us: i64 = 0;
    let gap_us = (spec.flow_gap * 1e6).round() as i64;
    for (fi, &label) in classes.iter().enumerate() {
        let candidates: Vec<&Profile> = profiles().iter().filter(|p| p.label == label).collect();
        let p = candidates[rng.gen_range(0..candidates.len())];
        let ttl_idx = rng.gen_range(0..TTLS.len());
        let port_idx = rng.gen_range(0..SRC_PORTS.len());
        let len = flow_len(p, ttl_idx);
        let start = records.len();
        for j in 0..len {
            let mut r = packet(p, j, len, ttl_idx, port_idx);
            if j == 0 {
                if fi > 0 {
                    clock_us += gap_us;
                }
            } else {
                clock_us += (iat(p, j, len) * 1e6).round() as i64;
            }
            r.timestamp = clock_us as f64 / 1e6;
            r.flow_index = fi as u32;
            records.push(r);
        }
        flows.push(SynthFlow { flow_index: fi as u32, label, profile: p.name.to_string(), start, len });
    }
    derive_flow_features(&mut records);
    Ok(SynthCorpus { spec: spec.clone(), records, flows })
}

/// Looks a packet up in the grammar from its own fields and returns its
/// successor. Works on any packet the generator can emit.
pub fn oracle_next(current: &PacketRecord) -> Result<NextPacket, SynthError> {
    let miss = |what: &str| SynthError::NotInGrammar(format!("missing or unknown {what}"));
    let port = current.dst_port().ok_or_else(|| miss("dst_port"))?;
    let proto = match current.ip_proto() {
        Some(6) => Proto::Tcp,
        Some(17) => Proto::Udp,
        _ => return Err(miss("ip_proto")),
    };
    let p = profiles().iter().find(|p| p.dst_port == port && p.proto == proto).ok_or_else(|| miss("profile"))?;
    let ttl = current.ttl().ok_or_else(|| miss("ttl"))?;
    let ttl_idx = TTLS.iter().position(|&t| t == ttl).ok_or_else(|| miss("ttl"))?;
    let sport = current.src_port().ok_or_else(|| miss("src_port"))?;
    let port_idx = SRC_PORTS.iter().position(|&s| s == sport).ok_or_else(|| miss("src_port"))?;
    let j = current.num("flow_pkt_seq").ok_or_else(|| miss("flow_pkt_seq"))? as usize - 1;
    let len = flow_len(p, ttl_idx);
    if j + 1 >= len {
        return Ok(NextPacket::FlowEnd);
    }
    let mut next = packet(p, j + 1, len, ttl_idx, port_idx);
    next.flow_index = current.flow_index;
    next.timestamp = ((current.timestamp * 1e6).round() + (iat(p, j + 1, len) * 1e6).round()) / 1e6;
    Ok(NextPacket::Packet(next))
}

impl SynthCorpus {
    pub fn flow_records(&self, flow: &SynthFlow) -> &[PacketRecord] {
        &self.records[flow.start..flow.start + flow.len]
    }

    /// Successor of record `i` as stored in the table.
    pub fn next_of(&self, i: usize) -> NextPacket {
        match self.records.get(i + 1) {
            Some(r) if r.flow_index == self.records[i].flow_index => NextPacket::Packet(r.clone()),
            _ => NextPacket::FlowEnd,
        }
    }

    /// Sidecar mapping (flow_index, position) to the next packet's fields.
    pub fn oracle_json(&self) -> Value {
        let names: Vec<&str> = manifest().names().collect();
        let mut entries = Vec::with_capacity(self.records.len());
        for flow in &self.flows {
            for pos in 0..flow.len {
                let next = match self.next_of(flow.start + pos) {
                    NextPacket::FlowEnd => Value::String("FLOW_END".into()),
                    NextPacket::Packet(r) => {
                        let mut obj = serde_json::Map::new();
                        for (name, v) in names.iter().zip(&r.values) {
                            let v = match v {
                                FieldValue::Missing => continue,
                                FieldValue::Num(x) => json!(x),
                                FieldValue::Cat(s) => json!(s),
                            };
                            obj.insert(name.to_string(), v);
                        }
                        Value::Object(obj)
                    }
                };
                entries.push(json!({"flow_index": flow.flow_index, "position": pos, "next": next}));
            }
        }
        json!({"format": 1, "spec": self.spec, "entries": entries})
    }

    pub fn write_oracle(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, serde_json::to_string(&self.oracle_json()).expect("oracle serializes"))?;
        Ok(())
    }
}

/// Column roles in [`selection_table`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnRole {
    Informative,
    Constant,
    /// Affine copy of an earlier informative column.
    Duplicate,
    /// Rare 0/1 spikes; variance far below the selection cutoff.
    Sparse,
}

/// Role of each of the 71 manifest columns: 26 informative, 15 each of
/// constant, duplicate and sparse.
pub fn selection_roles() -> Vec<ColumnRole> {
    use ColumnRole::*;
    let mut roles = vec![Informative, Informative];
    for _ in 0..15 {
        roles.extend([Informative, Constant, Duplicate, Sparse]);
    }
    roles.extend([Informative; 9]);
    roles
}

/// A numeric table over the manifest columns built so that variance and
/// correlation filtering leaves exactly the informative columns.
pub fn selection_table(seed: u64, rows: usize) -> FeatureMatrix {
    let names: Vec<String> = manifest().names().map(str::to_string).collect();
    let roles = selection_roles();
    debug_assert_eq!(roles.len(), names.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(roles.len());
    let mut informative = Vec::new();
    for (k, role) in roles.iter().enumerate() {
        let col = match role {
            ColumnRole::Informative => {
                informative.push(k);
                let (a, b) = (rng.gen_range(0.5..100.0), rng.gen_range(-50.0..50.0));
                (0..rows).map(|_| a * rng.gen::<f64>() + b).collect()
            }
            ColumnRole::Constant => vec![rng.gen_range(0.0..10.0_f64).round(); rows],
            ColumnRole::Duplicate => {
                let src = informative[rng.gen_range(0..informative.len())];
                let (a, b) = (rng.gen_range(1.0..5.0) * if rng.gen() { 1.0 } else { -1.0 }, rng.gen_range(-3.0..3.0));
                cols[src].iter().map(|x: &f64| a * x + b).collect()
            }
            ColumnRole::Sparse => {
                let off = rng.gen_range(0..50);
                (0..rows).map(|i| if i % 50 == off { 1.0 } else { 0.0 }).collect()
            }
        };
        cols.push(col);
    }
    let data = (0..rows).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
    FeatureMatrix::new(names, data, vec![Label::Unlabeled; rows], (0..rows as u32).map(|i| i / 10).collect())
        .expect("table shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_corpus() {
        let spec = GrammarSpec::default();
        let a = generate(&spec, 50).unwrap();
        let b = generate(&spec, 50).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.flows, b.flows);
        let c = generate(&GrammarSpec { seed: 7, ..spec }, 50).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn oracle_matches_table() {
        let corpus = generate(&GrammarSpec::with_attack_fraction(3, 0.5), 200).unwrap();
        for (i, r) in corpus.records.iter().enumerate() {
            assert_eq!(oracle_next(r).unwrap(), corpus.next_of(i), "record {i}");
        }
        let last = corpus.flows[0].start + corpus.flows[0].len - 1;
        assert_eq!(oracle_next(&corpus.records[last]).unwrap(), NextPacket::FlowEnd);
    }

    #[test]
    fn quotas_are_exact() {
        let spec = GrammarSpec::default();
        let q = quotas(&spec.class_mix, 10_000);
        assert_eq!(q.iter().map(|x| x.1).sum::<usize>(), 10_000);
        assert_eq!(q.iter().find(|x| x.0 == Label::Normal).unwrap().1, 8000);
    }

    #[test]
    fn benign_and_attack_profiles_are_separated() {
        assert!(separation() >= GrammarSpec::default().min_separation);
    }
}
