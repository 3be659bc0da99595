//! Classic libpcap capture decoding (Ethernet and raw-IP link types).

use std::path::Path;

use super::flow::{Endpoint, FiveTuple, FlowTable};
use super::record::{FieldValue, Label, PacketRecord};
use super::PacketError;

const MAGIC_US: u32 = 0xA1B2_C3D4;
const MAGIC_NS: u32 = 0xA1B2_3C4D;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CaptureHeader {
    pub big_endian: bool,
    pub nanosecond: bool,
    pub snaplen: u32,
    pub linktype: u32,
}

/// Records decoded from one capture plus the count of packets that could
/// not be decoded.
#[derive(Clone, Debug)]
pub struct ParsedCapture {
    pub header: CaptureHeader,
    pub records: Vec<PacketRecord>,
    pub skipped: usize,
}

pub fn parse_pcap(path: &Path, label: Option<Label>) -> Result<ParsedCapture, PacketError> {
    let bytes = std::fs::read(path)?;
    parse_pcap_bytes(&bytes, label)
}

fn read_u32(b: &[u8], big: bool) -> u32 {
    let a = [b[0], b[1], b[2], b[3]];
    if big {
        u32::from_be_bytes(a)
    } else {
        u32::from_le_bytes(a)
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<CaptureHeader, PacketError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(PacketError::MalformedCapture(format!(
            "global header needs {GLOBAL_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let le = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let be = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let (big_endian, nanosecond) = match (le, be) {
        (MAGIC_US, _) => (false, false),
        (MAGIC_NS, _) => (false, true),
        (_, MAGIC_US) => (true, false),
        (_, MAGIC_NS) => (true, true),
        _ => return Err(PacketError::MalformedCapture(format!("bad magic 0x{le:08x}"))),
    };
    Ok(CaptureHeader {
        big_endian,
        nanosecond,
        snaplen: read_u32(&bytes[16..], big_endian),
        linktype: read_u32(&bytes[20..], big_endian),
    })
}

pub fn parse_pcap_bytes(bytes: &[u8], label: Option<Label>) -> Result<ParsedCapture, PacketError> {
    let header = parse_header(bytes)?;
    let label = label.unwrap_or(Label::Unlabeled);
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut tuples = Vec::new();
    let mut pos = GLOBAL_HEADER_LEN;
    while pos < bytes.len() {
        if bytes.len() - pos < RECORD_HEADER_LEN {
            skipped += 1;
            break;
        }
        let rh = &bytes[pos..pos + RECORD_HEADER_LEN];
        let sec = read_u32(rh, header.big_endian);
        let frac = read_u32(&rh[4..], header.big_endian);
        let caplen = read_u32(&rh[8..], header.big_endian) as usize;
        let wirelen = read_u32(&rh[12..], header.big_endian);
        pos += RECORD_HEADER_LEN;
        if bytes.len() - pos < caplen {
            skipped += 1;
            break;
        }
        let frame = &bytes[pos..pos + caplen];
        pos += caplen;
        let ts = sec as f64 + frac as f64 / if header.nanosecond { 1e9 } else { 1e6 };
        match decode_frame(frame, wirelen, header.linktype, ts, label) {
            Some((rec, tuple)) => {
                records.push(rec);
                tuples.push(tuple);
            }
            None => skipped += 1,
        }
    }
    let mut table = FlowTable::new();
    for (rec, tuple) in records.iter_mut().zip(&tuples) {
        let a = table.assign(tuple);
        rec.flow_index = a.index;
        rec.set_num("direction", if a.reverse { 1.0 } else { 0.0 });
    }
    derive_flow_features(&mut records);
    Ok(ParsedCapture { header, records, skipped })
}

/// Rounds seconds to microsecond resolution.
pub fn round_us(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Fills `iat`, `flow_iat`, `flow_pkt_seq` and `flow_bytes` from timestamps,
/// flow indices and frame lengths, in record order.
pub fn derive_flow_features(records: &mut [PacketRecord]) {
    use std::collections::HashMap;
    let mut prev_ts: Option<f64> = None;
    let mut flows: HashMap<u32, (f64, u32, f64)> = HashMap::new();
    for rec in records.iter_mut() {
        let ts = rec.timestamp;
        rec.set_num("iat", prev_ts.map_or(0.0, |p| round_us(ts - p)));
        prev_ts = Some(ts);
        let frame = rec.num("frame_len").unwrap_or(0.0);
        let entry = flows.entry(rec.flow_index);
        let (flow_iat, seq, bytes) = match entry {
            std::collections::hash_map::Entry::Occupied(mut o) => {
                let (last, seq, bytes) = *o.get();
                let next = (ts, seq + 1, bytes + frame);
                o.insert(next);
                (round_us(ts - last), next.1, next.2)
            }
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert((ts, 1, frame));
                (0.0, 1, frame)
            }
        };
        rec.set_num("flow_iat", flow_iat);
        rec.set_num("flow_pkt_seq", seq as f64);
        rec.set_num("flow_bytes", bytes);
    }
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn flag(v: bool) -> FieldValue {
    FieldValue::Num(if v { 1.0 } else { 0.0 })
}

fn port_class(p: u16) -> f64 {
    match p {
        0..=1023 => 0.0,
        1024..=49151 => 1.0,
        _ => 2.0,
    }
}

fn mac_endpoint(mac: &[u8]) -> Endpoint {
    let mut addr = [0u8; 16];
    addr[..6].copy_from_slice(&mac[..6]);
    Endpoint { addr, port: 0 }
}

/// Decodes one frame. Returns `None` for frames whose headers are cut short.
fn decode_frame(frame: &[u8], wirelen: u32, linktype: u32, ts: f64, label: Label) -> Option<(PacketRecord, FiveTuple)> {
    let mut r = PacketRecord::empty(ts, label);
    let caplen = frame.len();
    r.set_num("frame_len", caplen as f64);
    r.set_num("wire_len", wirelen as f64);
    r.set("truncated", flag((caplen as u32) < wirelen));

    let (l2_len, ethertype, tuple_fallback) = match linktype {
        LINKTYPE_ETHERNET => {
            if caplen < 14 {
                return None;
            }
            let dst = &frame[0..6];
            let src = &frame[6..12];
            r.set("eth_dst_broadcast", flag(dst.iter().all(|&b| b == 0xff)));
            r.set("eth_dst_multicast", flag(dst[0] & 1 == 1));
            r.set("eth_src_local", flag(src[0] & 2 == 2));
            let mut et = be16(&frame[12..]);
            let mut l2 = 14;
            if et == 0x8100 {
                if caplen < 18 {
                    return None;
                }
                r.set("vlan_present", flag(true));
                r.set_num("vlan_id", (be16(&frame[14..]) & 0x0fff) as f64);
                et = be16(&frame[16..]);
                l2 = 18;
            } else {
                r.set("vlan_present", flag(false));
                r.set_num("vlan_id", 0.0);
            }
            let fallback = FiveTuple { src: mac_endpoint(src), dst: mac_endpoint(dst), proto: et };
            (l2, et, fallback)
        }
        LINKTYPE_RAW => {
            let et = match frame.first().map(|b| b >> 4) {
                Some(4) => 0x0800,
                Some(6) => 0x86DD,
                _ => 0,
            };
            let z = Endpoint { addr: [0; 16], port: 0 };
            (0, et, FiveTuple { src: z, dst: z, proto: et })
        }
        _ => return None,
    };
    r.set_num("l2_header_len", l2_len as f64);
    let eth_name = match ethertype {
        0x0800 => "ipv4",
        0x86DD => "ipv6",
        0x0806 => "arp",
        _ => "other",
    };
    r.set("eth_type", FieldValue::Cat(eth_name.to_string()));

    let ip = &frame[l2_len..];
    let net = match ethertype {
        0x0800 => Some(decode_ipv4(ip, &mut r)?),
        0x86DD => Some(decode_ipv6(ip, &mut r)?),
        _ => None,
    };
    let Some(net) = net else {
        r.set_num("ip_version", 0.0);
        r.set_num("l3_header_len", 0.0);
        r.set_num("l4_header_len", 0.0);
        r.set_num("header_len", l2_len as f64);
        let payload = caplen.saturating_sub(l2_len) as f64;
        r.set_num("payload_len", payload);
        r.set_num("payload_ratio", ratio(payload, caplen as f64));
        for name in ["is_tcp", "is_udp", "is_icmp"] {
            r.set(name, flag(false));
        }
        return Some((r, tuple_fallback));
    };

    let l4 = &ip[net.header_len.min(ip.len())..];
    let mut src_port = 0u16;
    let mut dst_port = 0u16;
    let mut l4_len = 0usize;
    r.set("is_tcp", flag(net.proto == 6 && !net.fragment));
    r.set("is_udp", flag(net.proto == 17 && !net.fragment));
    r.set("is_icmp", flag((net.proto == 1 || net.proto == 58) && !net.fragment));
    if !net.fragment {
        match net.proto {
            6 => {
                let (sp, dp, len) = decode_tcp(l4, &mut r)?;
                src_port = sp;
                dst_port = dp;
                l4_len = len;
            }
            17 => {
                if l4.len() < 8 {
                    return None;
                }
                src_port = be16(l4);
                dst_port = be16(&l4[2..]);
                r.set_num("src_port", src_port as f64);
                r.set_num("dst_port", dst_port as f64);
                r.set_num("src_port_class", port_class(src_port));
                r.set_num("dst_port_class", port_class(dst_port));
                r.set_num("udp_len", be16(&l4[4..]) as f64);
                r.set("udp_checksum_zero", flag(be16(&l4[6..]) == 0));
                l4_len = 8;
            }
            1 | 58 => {
                if l4.len() < 4 {
                    return None;
                }
                r.set_num("icmp_type", l4[0] as f64);
                r.set_num("icmp_code", l4[1] as f64);
                l4_len = 8.min(l4.len());
            }
            _ => {}
        }
    }
    r.set_num("l4_header_len", l4_len as f64);
    let header_len = l2_len + net.header_len + l4_len;
    r.set_num("header_len", header_len as f64);
    let payload = (net.total_len as f64 - net.header_len as f64 - l4_len as f64).max(0.0);
    r.set_num("payload_len", payload);
    r.set_num("payload_ratio", ratio(payload, caplen as f64));

    let tuple = FiveTuple {
        src: Endpoint { addr: net.src, port: src_port },
        dst: Endpoint { addr: net.dst, port: dst_port },
        proto: net.proto as u16,
    };
    Some((r, tuple))
}

fn ratio(payload: f64, frame: f64) -> f64 {
    if frame <= 0.0 {
        0.0
    } else {
        (payload / frame * 1e4).round() / 1e4
    }
}

struct NetLayer {
    header_len: usize,
    total_len: usize,
    proto: u8,
    fragment: bool,
    src: [u8; 16],
    dst: [u8; 16],
}

fn decode_ipv4(ip: &[u8], r: &mut PacketRecord) -> Option<NetLayer> {
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return None;
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    if ihl < 20 || ip.len() < ihl {
        return None;
    }
    let total = be16(&ip[2..]) as usize;
    let frag = be16(&ip[6..]);
    let offset = frag & 0x1fff;
    let mf = frag & 0x2000 != 0;
    let mut src = [0u8; 16];
    let mut dst = [0u8; 16];
    src[..4].copy_from_slice(&ip[12..16]);
    dst[..4].copy_from_slice(&ip[16..20]);
    r.set_num("ip_version", 4.0);
    r.set_num("ip_header_len", ihl as f64);
    r.set_num("l3_header_len", ihl as f64);
    r.set_num("ip_dscp", (ip[1] >> 2) as f64);
    r.set_num("ip_ecn", (ip[1] & 3) as f64);
    r.set_num("ip_len", total as f64);
    r.set_num("ip_id", be16(&ip[4..]) as f64);
    r.set("ip_flag_df", flag(frag & 0x4000 != 0));
    r.set("ip_flag_mf", flag(mf));
    r.set_num("ip_frag_offset", offset as f64);
    r.set_num("ttl", ip[8] as f64);
    r.set_num("ip_proto", ip[9] as f64);
    r.set_num("ip_checksum", be16(&ip[10..]) as f64);
    r.set_num("ip_options_len", (ihl - 20) as f64);
    let (s, d) = (&ip[12..16], &ip[16..20]);
    let private = |a: &[u8]| a[0] == 10 || (a[0] == 172 && (16..32).contains(&a[1])) || (a[0] == 192 && a[1] == 168);
    r.set("ip_src_private", flag(private(s)));
    r.set("ip_dst_private", flag(private(d)));
    r.set("ip_dst_multicast", flag((224..240).contains(&d[0])));
    r.set("ip_dst_broadcast", flag(d[3] == 255));
    r.set("ip_src_loopback", flag(s[0] == 127));
    Some(NetLayer { header_len: ihl, total_len: total, proto: ip[9], fragment: offset != 0, src, dst })
}

fn decode_ipv6(ip: &[u8], r: &mut PacketRecord) -> Option<NetLayer> {
    if ip.len() < 40 || ip[0] >> 4 != 6 {
        return None;
    }
    let word = be32(ip);
    let payload_len = be16(&ip[4..]) as usize;
    let mut next = ip[6];
    let mut header_len = 40usize;
    let mut fragment = false;
    // Walk hop-by-hop, routing, fragment and destination-option headers.
    loop {
        match next {
            0 | 43 | 60 => {
                let h = ip.get(header_len..header_len + 2)?;
                next = h[0];
                header_len += (h[1] as usize + 1) * 8;
            }
            44 => {
                let h = ip.get(header_len..header_len + 8)?;
                next = h[0];
                fragment = be16(&h[2..]) >> 3 != 0;
                header_len += 8;
            }
            _ => break,
        }
    }
    let mut src = [0u8; 16];
    let mut dst = [0u8; 16];
    src.copy_from_slice(&ip[8..24]);
    dst.copy_from_slice(&ip[24..40]);
    r.set_num("ip_version", 6.0);
    r.set_num("ip_header_len", 40.0);
    r.set_num("l3_header_len", header_len as f64);
    let tc = (word >> 20) & 0xff;
    r.set_num("ipv6_traffic_class", tc as f64);
    r.set_num("ip_dscp", (tc >> 2) as f64);
    r.set_num("ip_ecn", (tc & 3) as f64);
    r.set_num("ipv6_flow_label", (word & 0x000f_ffff) as f64);
    r.set_num("ipv6_payload_len", payload_len as f64);
    r.set_num("ip_len", (40 + payload_len) as f64);
    r.set_num("ttl", ip[7] as f64);
    r.set_num("ip_proto", next as f64);
    r.set("ip_src_private", flag(src[0] & 0xfe == 0xfc));
    r.set("ip_dst_private", flag(dst[0] & 0xfe == 0xfc));
    r.set("ip_dst_multicast", flag(dst[0] == 0xff));
    r.set("ip_dst_broadcast", flag(false));
    let mut loopback = [0u8; 16];
    loopback[15] = 1;
    r.set("ip_src_loopback", flag(src == loopback));
    Some(NetLayer { header_len, total_len: 40 + payload_len, proto: next, fragment, src, dst })
}

fn decode_tcp(l4: &[u8], r: &mut PacketRecord) -> Option<(u16, u16, usize)> {
    if l4.len() < 20 {
        return None;
    }
    let sp = be16(l4);
    let dp = be16(&l4[2..]);
    let off = (l4[12] >> 4) as usize * 4;
    if off < 20 || l4.len() < off {
        return None;
    }
    let flags = l4[13];
    r.set_num("src_port", sp as f64);
    r.set_num("dst_port", dp as f64);
    r.set_num("src_port_class", port_class(sp));
    r.set_num("dst_port_class", port_class(dp));
    r.set_num("tcp_seq", be32(&l4[4..]) as f64);
    r.set_num("tcp_ack", be32(&l4[8..]) as f64);
    r.set_num("tcp_data_offset", off as f64);
    r.set_num("tcp_flags", flags as f64);
    for (bit, name) in ["fin", "syn", "rst", "psh", "ack", "urg", "ece", "cwr"].iter().enumerate() {
        r.set(&format!("tcp_flag_{name}"), flag(flags & (1 << bit) != 0));
    }
    r.set_num("window_size", be16(&l4[14..]) as f64);
    r.set_num("tcp_urgent_ptr", be16(&l4[18..]) as f64);
    r.set_num("tcp_options_len", (off - 20) as f64);
    let (mut mss, mut wscale, mut sack, mut tsopt) = (0u16, 0u8, false, false);
    let opts = &l4[20..off];
    let mut i = 0;
    while i < opts.len() {
        match opts[i] {
            0 => break,
            1 => i += 1,
            kind => {
                let Some(&len) = opts.get(i + 1) else { break };
                let len = len as usize;
                if len < 2 || i + len > opts.len() {
                    break;
                }
                match kind {
                    2 if len == 4 => mss = be16(&opts[i + 2..]),
                    3 if len == 3 => wscale = opts[i + 2],
                    4 => sack = true,
                    8 => tsopt = true,
                    _ => {}
                }
                i += len;
            }
        }
    }
    r.set_num("tcp_opt_mss", mss as f64);
    r.set_num("tcp_opt_wscale", wscale as f64);
    r.set("tcp_opt_sack_perm", flag(sack));
    r.set("tcp_opt_timestamp", flag(tsopt));
    Some((sp, dp, off))
}

/// Minimal capture writer for fixtures: Ethernet + IPv4 + TCP/UDP frames.
pub mod writer {
    /// Fields of a synthetic IPv4 packet.
    #[derive(Clone, Debug)]
    pub struct Ipv4Packet {
        pub src: [u8; 4],
        pub dst: [u8; 4],
        pub ttl: u8,
        pub transport: Transport,
        pub payload_len: usize,
    }

    #[derive(Clone, Debug)]
    pub enum Transport {
        Tcp { src_port: u16, dst_port: u16, flags: u8, window: u16, seq: u32, ack: u32 },
        Udp { src_port: u16, dst_port: u16 },
    }

    fn checksum(bytes: &[u8]) -> u16 {
        let mut sum = 0u32;
        for c in bytes.chunks(2) {
            let w = if c.len() == 2 { u16::from_be_bytes([c[0], c[1]]) } else { u16::from_be_bytes([c[0], 0]) };
            sum += w as u32;
        }
        while sum >> 16 != 0 {
            sum = (sum & 0xffff) + (sum >> 16);
        }
        !(sum as u16)
    }

    /// Ethernet frame bytes for `p` (payload zero-filled).
    pub fn ethernet_frame(p: &Ipv4Packet) -> Vec<u8> {
        let mut f = vec![0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01, 0x08, 0x00];
        let l4_len = match p.transport {
            Transport::Tcp { .. } => 20,
            Transport::Udp { .. } => 8,
        };
        let total = 20 + l4_len + p.payload_len;
        let proto = match p.transport {
            Transport::Tcp { .. } => 6,
            Transport::Udp { .. } => 17,
        };
        let mut ip = vec![0x45, 0, (total >> 8) as u8, total as u8, 0, 0, 0x40, 0, p.ttl, proto, 0, 0];
        ip.extend_from_slice(&p.src);
        ip.extend_from_slice(&p.dst);
        let c = checksum(&ip);
        ip[10..12].copy_from_slice(&c.to_be_bytes());
        f.extend_from_slice(&ip);
        match p.transport {
            Transport::Tcp { src_port, dst_port, flags, window, seq, ack } => {
                f.extend_from_slice(&src_port.to_be_bytes());
                f.extend_from_slice(&dst_port.to_be_bytes());
                f.extend_from_slice(&seq.to_be_bytes());
                f.extend_from_slice(&ack.to_be_bytes());
                f.extend_from_slice(&[0x50, flags]);
                f.extend_from_slice(&window.to_be_bytes());
                f.extend_from_slice(&[0, 0, 0, 0]);
            }
            Transport::Udp { src_port, dst_port } => {
                f.extend_from_slice(&src_port.to_be_bytes());
                f.extend_from_slice(&dst_port.to_be_bytes());
                f.extend_from_slice(&((8 + p.payload_len) as u16).to_be_bytes());
                f.extend_from_slice(&[0, 0]);
            }
        }
        f.resize(f.len() + p.payload_len, 0);
        f
    }

    /// Little-endian microsecond capture of `(timestamp_us, frame)` pairs.
    pub fn capture(frames: &[(u64, Vec<u8>)]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&0xA1B2_C3D4u32.to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&0i32.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&65535u32.to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
        for (ts, frame) in frames {
            out.extend_from_slice(&((ts / 1_000_000) as u32).to_le_bytes());
            out.extend_from_slice(&((ts % 1_000_000) as u32).to_le_bytes());
            out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
            out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
            out.extend_from_slice(frame);
        }
        out
    }
}
