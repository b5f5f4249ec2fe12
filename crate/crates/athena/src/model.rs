//! Canonical packet and log data model, normalization rules, and the
//! line-oriented file formats shared by every other module.
//!
//! Timestamps are stored as integer microseconds so that strict-increase
//! checks and interval comparisons never depend on float rounding. The
//! public API exposes seconds as `f64` where a human-facing value is wanted.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::pcap::RawPacketRecord;

/// Microseconds per second, for timestamp conversions.
pub const MICROS_PER_SEC: f64 = 1_000_000.0;

/// Errors for model construction and the canonical text formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {0}: malformed record")]
    MalformedLine(usize),
    #[error("line {0}: timestamp does not strictly increase")]
    NonMonotonicTimestamp(usize),
    #[error("line {0}: port out of range 0..=65535")]
    InvalidPort(usize),
    #[error("signature header missing or malformed")]
    BadSignatureHeader,
    #[error("signature layout invalid: {0}")]
    SignatureLayout(String),
    #[error("log packets do not all carry the declared device address")]
    DeviceMismatch,
    #[error("signature set invalid: {0}")]
    BadSignatureSet(String),
}

/// Transport protocol of a packet. Codes other than TCP/UDP are carried
/// verbatim; `OTHER:6` and `OTHER:17` are rejected at parse so the textual
/// form stays canonical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Tcp,
    Udp,
    Other(u8),
}

impl Protocol {
    pub fn from_ip_proto(code: u8) -> Self {
        match code {
            6 => Protocol::Tcp,
            17 => Protocol::Udp,
            other => Protocol::Other(other),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Tcp => write!(f, "TCP"),
            Protocol::Udp => write!(f, "UDP"),
            Protocol::Other(code) => write!(f, "OTHER:{code}"),
        }
    }
}

/// Traffic direction relative to the IoT device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    DeviceToServer,
    ServerToDevice,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::DeviceToServer => write!(f, "D2S"),
            Direction::ServerToDevice => write!(f, "S2D"),
        }
    }
}

/// Fixed-length digest of application-layer payload (FNV-1a 64).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PayloadDigest(pub [u8; 8]);

impl PayloadDigest {
    /// Digest raw payload bytes.
    pub fn of(payload: &[u8]) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in payload {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        PayloadDigest(h.to_be_bytes())
    }

    pub fn to_hex(self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        let mut out = [0u8; 8];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16)?;
            let lo = (chunk[1] as char).to_digit(16)?;
            out[i] = (hi * 16 + lo) as u8;
        }
        Some(PayloadDigest(out))
    }
}

/// Identity of a packet with the timestamp removed: device address,
/// canonical server name, server port, protocol, direction, and length.
///
/// Equality and hashing ignore `payload_digest`; signatures match on
/// endpoint, direction, and length because payloads are usually encrypted.
/// [`BasePacket::same_identity_strict`] additionally compares digests when
/// both sides carry one.
#[derive(Debug, Clone)]
pub struct BasePacket {
    pub device_addr: String,
    pub server_name: String,
    pub server_port: u16,
    pub protocol: Protocol,
    pub direction: Direction,
    pub length: u32,
    pub payload_digest: Option<PayloadDigest>,
}

impl PartialEq for BasePacket {
    fn eq(&self, other: &Self) -> bool {
        self.device_addr == other.device_addr
            && self.server_name == other.server_name
            && self.server_port == other.server_port
            && self.protocol == other.protocol
            && self.direction == other.direction
            && self.length == other.length
    }
}

impl Eq for BasePacket {}

impl std::hash::Hash for BasePacket {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.device_addr.hash(state);
        self.server_name.hash(state);
        self.server_port.hash(state);
        self.protocol.hash(state);
        self.direction.hash(state);
        self.length.hash(state);
    }
}

impl BasePacket {
    /// Strict-mode identity: field-wise equality where payload digests
    /// participate when present on both sides.
    pub fn same_identity_strict(&self, other: &Self) -> bool {
        self == other
            && match (&self.payload_digest, &other.payload_digest) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
    }
}

/// A base packet with a timestamp: absolute in a [`TrafficLog`], relative
/// (first packet at 0) in a [`Signature`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedPacket {
    pub base: BasePacket,
    /// Timestamp in integer microseconds.
    pub t_us: i64,
}

impl TimedPacket {
    pub fn new(base: BasePacket, t_us: i64) -> Self {
        TimedPacket { base, t_us }
    }

    /// Timestamp in seconds.
    pub fn t_secs(&self) -> f64 {
        self.t_us as f64 / MICROS_PER_SEC
    }
}

/// An ordered sequence of timed packets with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrafficLog {
    packets: Vec<TimedPacket>,
    device_addr: Option<String>,
}

impl TrafficLog {
    pub fn empty() -> Self {
        TrafficLog::default()
    }

    /// Build a log, enforcing strictly increasing timestamps. The error
    /// carries the 1-based position of the offending packet.
    pub fn new(packets: Vec<TimedPacket>) -> Result<Self, ModelError> {
        for (i, pair) in packets.windows(2).enumerate() {
            if pair[1].t_us <= pair[0].t_us {
                return Err(ModelError::NonMonotonicTimestamp(i + 2));
            }
        }
        Ok(TrafficLog {
            packets,
            device_addr: None,
        })
    }

    /// Tag this log as belonging to one device; every packet must carry
    /// that address.
    pub fn with_device(mut self, addr: &str) -> Result<Self, ModelError> {
        if self.packets.iter().any(|p| p.base.device_addr != addr) {
            return Err(ModelError::DeviceMismatch);
        }
        self.device_addr = Some(addr.to_string());
        Ok(self)
    }

    pub fn packets(&self) -> &[TimedPacket] {
        &self.packets
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn device_addr(&self) -> Option<&str> {
        self.device_addr.as_deref()
    }

    pub fn into_packets(self) -> Vec<TimedPacket> {
        self.packets
    }
}

/// Per-gap interval statistics over repeated captures, in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalStat {
    pub mean_us: f64,
    pub stdev_us: f64,
    pub sample_count: u32,
}

impl IntervalStat {
    pub fn mean_secs(&self) -> f64 {
        self.mean_us / MICROS_PER_SEC
    }

    pub fn stdev_secs(&self) -> f64 {
        self.stdev_us / MICROS_PER_SEC
    }
}

/// An activity signature: an ordered sequence of base packets with relative
/// timestamps (first at 0) plus per-gap interval statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub activity_name: String,
    pub device_label: String,
    packets: Vec<TimedPacket>,
    interval_stats: Vec<IntervalStat>,
}

impl Signature {
    pub fn new(
        activity_name: &str,
        device_label: &str,
        packets: Vec<TimedPacket>,
        interval_stats: Vec<IntervalStat>,
    ) -> Result<Self, ModelError> {
        if packets.is_empty() {
            return Err(ModelError::SignatureLayout("no packets".into()));
        }
        if packets[0].t_us != 0 {
            return Err(ModelError::SignatureLayout(
                "first relative timestamp must be 0".into(),
            ));
        }
        if interval_stats.len() != packets.len() - 1 {
            return Err(ModelError::SignatureLayout(format!(
                "expected {} interval stats, got {}",
                packets.len() - 1,
                interval_stats.len()
            )));
        }
        for (j, pair) in packets.windows(2).enumerate() {
            let gap = pair[1].t_us - pair[0].t_us;
            if gap <= 0 {
                return Err(ModelError::SignatureLayout(format!(
                    "gap {} is not positive",
                    j + 1
                )));
            }
            let stat = &interval_stats[j];
            if stat.stdev_us < 0.0 || stat.mean_us <= 0.0 || stat.sample_count < 1 {
                return Err(ModelError::SignatureLayout(format!(
                    "interval stat {} out of range",
                    j + 1
                )));
            }
            if (stat.mean_us - gap as f64).abs() > 1.0 {
                return Err(ModelError::SignatureLayout(format!(
                    "interval stat {} mean {}us disagrees with packet gap {}us",
                    j + 1,
                    stat.mean_us,
                    gap
                )));
            }
        }
        Ok(Signature {
            activity_name: activity_name.to_string(),
            device_label: device_label.to_string(),
            packets,
            interval_stats,
        })
    }

    pub fn packets(&self) -> &[TimedPacket] {
        &self.packets
    }

    /// Number of packets `n`.
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 1 by construction
    }

    pub fn interval_stats(&self) -> &[IntervalStat] {
        &self.interval_stats
    }

    /// Inter-packet gaps in microseconds, length `n - 1`.
    pub fn gaps_us(&self) -> Vec<i64> {
        self.packets
            .windows(2)
            .map(|w| w[1].t_us - w[0].t_us)
            .collect()
    }

    /// Base-packet sequence without timestamps.
    pub fn bases(&self) -> Vec<BasePacket> {
        self.packets.iter().map(|p| p.base.clone()).collect()
    }
}

/// A set of distinct signatures for one device, ordered and unique by
/// activity name.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSet {
    signatures: Vec<Signature>,
}

impl SignatureSet {
    pub fn new(mut signatures: Vec<Signature>) -> Result<Self, ModelError> {
        if signatures.is_empty() {
            return Err(ModelError::BadSignatureSet("empty set".into()));
        }
        signatures.sort_by(|a, b| a.activity_name.cmp(&b.activity_name));
        for pair in signatures.windows(2) {
            if pair[0].activity_name == pair[1].activity_name {
                return Err(ModelError::BadSignatureSet(format!(
                    "duplicate activity name {}",
                    pair[0].activity_name
                )));
            }
        }
        Ok(SignatureSet { signatures })
    }

    pub fn signatures(&self) -> &[Signature] {
        &self.signatures
    }

    pub fn get(&self, activity_name: &str) -> Option<&Signature> {
        self.signatures
            .iter()
            .find(|s| s.activity_name == activity_name)
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        false // K >= 1 by construction
    }

    /// Largest signature length in the set.
    pub fn n_max(&self) -> usize {
        self.signatures.iter().map(Signature::len).max().unwrap_or(0)
    }
}

fn format_packet_line(p: &TimedPacket) -> String {
    let mut line = format!(
        "{} {} {} {} {} {} {}",
        p.t_us,
        p.base.device_addr,
        p.base.server_name,
        p.base.server_port,
        p.base.protocol,
        p.base.direction,
        p.base.length
    );
    if let Some(d) = &p.base.payload_digest {
        line.push(' ');
        line.push_str(&d.to_hex());
    }
    line
}

fn parse_packet_line(line: &str, line_no: usize) -> Result<TimedPacket, ModelError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 7 || fields.len() > 8 {
        return Err(ModelError::MalformedLine(line_no));
    }
    let t_us: i64 = fields[0]
        .parse()
        .map_err(|_| ModelError::MalformedLine(line_no))?;
    let device_addr = fields[1].to_string();
    let server_name = fields[2].to_string();
    let port: u32 = fields[3]
        .parse()
        .map_err(|_| ModelError::MalformedLine(line_no))?;
    if port > u32::from(u16::MAX) {
        return Err(ModelError::InvalidPort(line_no));
    }
    let protocol = match fields[4] {
        "TCP" => Protocol::Tcp,
        "UDP" => Protocol::Udp,
        other => match other.strip_prefix("OTHER:") {
            Some(code) => {
                let code: u8 = code.parse().map_err(|_| ModelError::MalformedLine(line_no))?;
                if code == 6 || code == 17 {
                    // must be spelled TCP/UDP
                    return Err(ModelError::MalformedLine(line_no));
                }
                Protocol::Other(code)
            }
            None => return Err(ModelError::MalformedLine(line_no)),
        },
    };
    let direction = match fields[5] {
        "D2S" => Direction::DeviceToServer,
        "S2D" => Direction::ServerToDevice,
        _ => return Err(ModelError::MalformedLine(line_no)),
    };
    let length: u32 = fields[6]
        .parse()
        .map_err(|_| ModelError::MalformedLine(line_no))?;
    let payload_digest = if fields.len() == 8 {
        Some(PayloadDigest::from_hex(fields[7]).ok_or(ModelError::MalformedLine(line_no))?)
    } else {
        None
    };
    Ok(TimedPacket {
        base: BasePacket {
            device_addr,
            server_name,
            server_port: port as u16,
            protocol,
            direction,
            length,
            payload_digest,
        },
        t_us,
    })
}

/// Parse the canonical line-oriented log format. Lines are one packet each:
/// `<t_us> <device_addr> <server_name> <port> <TCP|UDP|OTHER:code> <D2S|S2D> <length> [digest]`.
pub fn parse_log(text: &str) -> Result<TrafficLog, ModelError> {
    let mut packets = Vec::new();
    let mut prev_t: Option<i64> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let packet = parse_packet_line(line, line_no)?;
        if let Some(prev) = prev_t {
            if packet.t_us <= prev {
                return Err(ModelError::NonMonotonicTimestamp(line_no));
            }
        }
        prev_t = Some(packet.t_us);
        packets.push(packet);
    }
    TrafficLog::new(packets)
}

/// Serialize a log to its canonical textual form, one packet per line with
/// a trailing newline per line. `parse_log` inverts this byte for byte.
pub fn serialize_log(log: &TrafficLog) -> String {
    let mut out = String::new();
    for p in log.packets() {
        out.push_str(&format_packet_line(p));
        out.push('\n');
    }
    out
}

/// Parse the signature file format: a header
/// `# signature <device_label> <activity_name> <n>`, then `n` canonical
/// packet lines with relative timestamps, then `n - 1` lines
/// `interval <j> <mean_us> <stdev_us> <count>`.
pub fn parse_signature(text: &str) -> Result<Signature, ModelError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(ModelError::BadSignatureHeader)?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 5 || head[0] != "#" || head[1] != "signature" {
        return Err(ModelError::BadSignatureHeader);
    }
    let device_label = head[2];
    let activity_name = head[3];
    let n: usize = head[4].parse().map_err(|_| ModelError::BadSignatureHeader)?;
    if n == 0 {
        return Err(ModelError::SignatureLayout("n must be >= 1".into()));
    }

    let mut packets = Vec::with_capacity(n);
    for _ in 0..n {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| ModelError::SignatureLayout("missing packet lines".into()))?;
        packets.push(parse_packet_line(line, idx + 1)?);
    }
    let mut stats = Vec::with_capacity(n - 1);
    for j in 1..n {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| ModelError::SignatureLayout("missing interval lines".into()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "interval" {
            return Err(ModelError::MalformedLine(idx + 1));
        }
        let got_j: usize = fields[1].parse().map_err(|_| ModelError::MalformedLine(idx + 1))?;
        if got_j != j {
            return Err(ModelError::SignatureLayout(format!(
                "interval index {got_j} out of order, expected {j}"
            )));
        }
        let mean_us: f64 = fields[2].parse().map_err(|_| ModelError::MalformedLine(idx + 1))?;
        let stdev_us: f64 = fields[3].parse().map_err(|_| ModelError::MalformedLine(idx + 1))?;
        let sample_count: u32 =
            fields[4].parse().map_err(|_| ModelError::MalformedLine(idx + 1))?;
        stats.push(IntervalStat {
            mean_us,
            stdev_us,
            sample_count,
        });
    }
    if lines.next().is_some() {
        return Err(ModelError::SignatureLayout("trailing content".into()));
    }
    Signature::new(activity_name, device_label, packets, stats)
}

/// Serialize a signature to its canonical file form. `parse_signature`
/// inverts this byte for byte.
pub fn serialize_signature(sig: &Signature) -> String {
    let mut out = format!(
        "# signature {} {} {}\n",
        sig.device_label,
        sig.activity_name,
        sig.len()
    );
    for p in sig.packets() {
        out.push_str(&format_packet_line(p));
        out.push('\n');
    }
    for (j, stat) in sig.interval_stats().iter().enumerate() {
        out.push_str(&format!(
            "interval {} {} {} {}\n",
            j + 1,
            stat.mean_us,
            stat.stdev_us,
            stat.sample_count
        ));
    }
    out
}

/// Split a mixed log into per-device sublogs keyed by device address.
/// Relative order and timestamps are preserved; the union of the sublogs
/// is the input.
pub fn cluster_by_device(log: &TrafficLog) -> BTreeMap<String, TrafficLog> {
    let mut buckets: BTreeMap<String, Vec<TimedPacket>> = BTreeMap::new();
    for p in log.packets() {
        buckets
            .entry(p.base.device_addr.clone())
            .or_default()
            .push(p.clone());
    }
    buckets
        .into_iter()
        .map(|(addr, packets)| {
            let sublog = TrafficLog::new(packets)
                .expect("sublog of a monotonic log is monotonic")
                .with_device(&addr)
                .expect("bucket shares one address");
            (addr, sublog)
        })
        .collect()
}

/// Static table mapping textual server addresses to canonical cloud server
/// names. Resolution is a single lookup; unmapped addresses pass through.
#[derive(Debug, Clone, Default)]
pub struct NameTable {
    entries: BTreeMap<String, String>,
}

impl NameTable {
    pub fn empty() -> Self {
        NameTable::default()
    }

    pub fn insert(&mut self, addr: &str, name: &str) {
        self.entries.insert(addr.to_string(), name.to_string());
    }

    pub fn resolve<'a>(&'a self, addr: &'a str) -> &'a str {
        self.entries.get(addr).map(String::as_str).unwrap_or(addr)
    }

    /// Parse lines of `<address> <canonical_name>`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut table = NameTable::empty();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(ModelError::MalformedLine(idx + 1));
            }
            table.insert(fields[0], fields[1]);
        }
        Ok(table)
    }
}

/// IPv4 prefix identifying the home network, e.g. `192.168.1.0/24`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HomePrefix {
    addr: u32,
    bits: u8,
}

impl HomePrefix {
    pub fn parse(s: &str) -> Option<Self> {
        let (addr, bits) = s.split_once('/')?;
        let bits: u8 = bits.parse().ok()?;
        if bits > 32 {
            return None;
        }
        let addr = parse_ipv4(addr)?;
        Some(HomePrefix { addr, bits })
    }

    pub fn contains(&self, addr: &str) -> bool {
        match parse_ipv4(addr) {
            Some(a) => {
                let mask = if self.bits == 0 {
                    0
                } else {
                    u32::MAX << (32 - self.bits)
                };
                (a & mask) == (self.addr & mask)
            }
            None => false,
        }
    }
}

fn parse_ipv4(s: &str) -> Option<u32> {
    let mut out: u32 = 0;
    let mut parts = 0;
    for part in s.split('.') {
        if part.is_empty() || part.len() > 3 || !part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let v: u32 = part.parse().ok()?;
        if v > 255 {
            return None;
        }
        out = (out << 8) | v;
        parts += 1;
    }
    if parts == 4 {
        Some(out)
    } else {
        None
    }
}

/// Reduce a raw capture record to its base-packet identity: the local
/// ephemeral port and per-connection dynamic fields are dropped, the remote
/// address is replaced by its canonical name when the table has an entry,
/// and direction is inferred from home-prefix membership of the source.
pub fn normalize_packet(
    raw: &RawPacketRecord,
    home: &HomePrefix,
    names: &NameTable,
) -> BasePacket {
    let device_is_src = home.contains(&raw.src_addr);
    let (device_addr, server_addr, server_port, direction) = if device_is_src {
        (
            raw.src_addr.clone(),
            raw.dst_addr.as_str(),
            raw.dst_port.unwrap_or(0),
            Direction::DeviceToServer,
        )
    } else {
        (
            raw.dst_addr.clone(),
            raw.src_addr.as_str(),
            raw.src_port.unwrap_or(0),
            Direction::ServerToDevice,
        )
    };
    BasePacket {
        device_addr,
        server_name: names.resolve(server_addr).to_string(),
        server_port,
        protocol: raw.protocol,
        direction,
        length: raw.total_length,
        payload_digest: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base(dev: &str, server: &str, port: u16, len: u32) -> BasePacket {
        BasePacket {
            device_addr: dev.to_string(),
            server_name: server.to_string(),
            server_port: port,
            protocol: Protocol::Tcp,
            direction: Direction::DeviceToServer,
            length: len,
            payload_digest: None,
        }
    }

    fn pkt(dev: &str, t_us: i64) -> TimedPacket {
        TimedPacket::new(base(dev, "srv.example.com", 443, 100), t_us)
    }

    #[test]
    fn parse_empty_file_gives_empty_log() {
        let log = parse_log("").unwrap();
        assert_eq!(log.len(), 0);
    }

    #[test]
    fn parse_singleton_line() {
        let log = parse_log("0 dev srv.example.com 443 TCP D2S 100\n").unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.packets()[0].t_us, 0);
        assert_eq!(log.packets()[0].base.server_port, 443);
    }

    #[test]
    fn equal_timestamps_rejected() {
        let text = "5 dev s 1 TCP D2S 1\n5 dev s 1 TCP D2S 1\n";
        assert_eq!(
            parse_log(text).unwrap_err(),
            ModelError::NonMonotonicTimestamp(2)
        );
    }

    #[test]
    fn port_out_of_range_rejected() {
        let text = "0 dev s 70000 TCP D2S 1\n";
        assert_eq!(parse_log(text).unwrap_err(), ModelError::InvalidPort(1));
    }

    #[test]
    fn malformed_line_reports_position() {
        let text = "0 dev s 443 TCP D2S 1\nnot a packet\n";
        assert_eq!(parse_log(text).unwrap_err(), ModelError::MalformedLine(2));
    }

    #[test]
    fn other_protocol_round_trips_but_canonical_codes_rejected() {
        let text = "0 dev s 0 OTHER:1 S2D 84\n";
        let log = parse_log(text).unwrap();
        assert_eq!(log.packets()[0].base.protocol, Protocol::Other(1));
        assert_eq!(serialize_log(&log), text);
        assert!(parse_log("0 dev s 0 OTHER:6 S2D 84\n").is_err());
        assert!(parse_log("0 dev s 0 OTHER:17 S2D 84\n").is_err());
    }

    #[test]
    fn serialize_parse_round_trip_with_digest() {
        let mut p = pkt("dev", 12);
        p.base.payload_digest = Some(PayloadDigest::of(b"hello"));
        let log = TrafficLog::new(vec![pkt("dev", 3), p]).unwrap();
        let text = serialize_log(&log);
        let reparsed = parse_log(&text).unwrap();
        assert_eq!(reparsed.packets(), log.packets());
        assert_eq!(serialize_log(&reparsed), text);
    }

    #[test]
    fn cluster_partitions_by_device() {
        let log = TrafficLog::new(vec![pkt("a", 1), pkt("b", 2), pkt("a", 3)]).unwrap();
        let map = cluster_by_device(&log);
        assert_eq!(map.len(), 2);
        assert_eq!(map["a"].len(), 2);
        assert_eq!(map["b"].len(), 1);
        assert_eq!(map["a"].device_addr(), Some("a"));
    }

    #[test]
    fn cluster_single_device_is_identity() {
        let log = TrafficLog::new(vec![pkt("a", 1), pkt("a", 2)]).unwrap();
        let map = cluster_by_device(&log);
        assert_eq!(map.len(), 1);
        assert_eq!(map["a"].packets(), log.packets());
    }

    #[test]
    fn cluster_empty_log_is_empty_map() {
        assert!(cluster_by_device(&TrafficLog::empty()).is_empty());
    }

    #[test]
    fn cluster_merge_reproduces_input() {
        let log = TrafficLog::new(vec![pkt("a", 1), pkt("b", 2), pkt("c", 3), pkt("a", 4)]).unwrap();
        let map = cluster_by_device(&log);
        let mut merged: Vec<TimedPacket> = map
            .values()
            .flat_map(|l| l.packets().iter().cloned())
            .collect();
        merged.sort_by_key(|p| p.t_us);
        assert_eq!(merged, log.packets());
    }

    #[test]
    fn normalize_resolves_known_server() {
        let raw = RawPacketRecord {
            t_us: 0,
            src_addr: "192.168.1.7".into(),
            dst_addr: "34.194.121.50".into(),
            src_port: Some(49157),
            dst_port: Some(443),
            protocol: Protocol::Tcp,
            total_length: 637,
        };
        let home = HomePrefix::parse("192.168.1.0/24").unwrap();
        let mut names = NameTable::empty();
        names.insert("34.194.121.50", "rbs.august.com");
        let b = normalize_packet(&raw, &home, &names);
        assert_eq!(b.server_name, "rbs.august.com");
        assert_eq!(b.server_port, 443);
        assert_eq!(b.direction, Direction::DeviceToServer);
        assert_eq!(b.device_addr, "192.168.1.7");
    }

    #[test]
    fn normalize_falls_back_to_literal_address() {
        let raw = RawPacketRecord {
            t_us: 0,
            src_addr: "8.8.4.4".into(),
            dst_addr: "192.168.1.7".into(),
            src_port: Some(53),
            dst_port: Some(40001),
            protocol: Protocol::Udp,
            total_length: 90,
        };
        let home = HomePrefix::parse("192.168.1.0/24").unwrap();
        let b = normalize_packet(&raw, &home, &NameTable::empty());
        assert_eq!(b.server_name, "8.8.4.4");
        assert_eq!(b.direction, Direction::ServerToDevice);
        assert_eq!(b.server_port, 53);
    }

    #[test]
    fn normalize_discards_ephemeral_port() {
        let home = HomePrefix::parse("10.0.0.0/8").unwrap();
        let names = NameTable::empty();
        let mk = |local_port| RawPacketRecord {
            t_us: 0,
            src_addr: "10.0.0.9".into(),
            dst_addr: "1.2.3.4".into(),
            src_port: Some(local_port),
            dst_port: Some(443),
            protocol: Protocol::Tcp,
            total_length: 200,
        };
        assert_eq!(
            normalize_packet(&mk(49152), &home, &names),
            normalize_packet(&mk(60000), &home, &names)
        );
    }

    #[test]
    fn normalize_is_idempotent_on_canonical_names() {
        let mut names = NameTable::empty();
        names.insert("34.194.121.50", "rbs.august.com");
        // resolving a value the table already produced is the identity
        assert_eq!(names.resolve("rbs.august.com"), "rbs.august.com");
        assert_eq!(names.resolve(names.resolve("34.194.121.50")), "rbs.august.com");
    }

    #[test]
    fn payload_digest_excluded_from_default_equality() {
        let mut a = base("d", "s", 1, 10);
        let mut b = a.clone();
        a.payload_digest = Some(PayloadDigest::of(b"one"));
        b.payload_digest = Some(PayloadDigest::of(b"two"));
        assert_eq!(a, b);
        assert!(!a.same_identity_strict(&b));
        b.payload_digest = None;
        assert!(a.same_identity_strict(&b));
    }

    #[test]
    fn signature_validates_layout() {
        let p0 = TimedPacket::new(base("d", "s", 1, 10), 0);
        let p1 = TimedPacket::new(base("d", "s", 1, 20), 4_000_000);
        let stat = IntervalStat {
            mean_us: 4_000_000.0,
            stdev_us: 0.0,
            sample_count: 2,
        };
        let sig = Signature::new("act", "dev", vec![p0.clone(), p1.clone()], vec![stat]).unwrap();
        assert_eq!(sig.gaps_us(), vec![4_000_000]);

        // first timestamp must be zero
        let off = TimedPacket::new(base("d", "s", 1, 10), 5);
        assert!(Signature::new("act", "dev", vec![off, p1.clone()], vec![]).is_err());
        // stats must agree with gaps
        let bad = IntervalStat {
            mean_us: 9.0,
            stdev_us: 0.0,
            sample_count: 2,
        };
        assert!(Signature::new("act", "dev", vec![p0, p1], vec![bad]).is_err());
    }

    #[test]
    fn signature_file_round_trip() {
        let p0 = TimedPacket::new(base("lock", "rbs.august.com", 443, 413), 0);
        let p1 = TimedPacket::new(base("lock", "rbs.august.com", 443, 605), 8000);
        let sig = Signature::new(
            "wifi-(un)locking",
            "august-lock",
            vec![p0, p1],
            vec![IntervalStat {
                mean_us: 8000.0,
                stdev_us: 1000.0,
                sample_count: 100,
            }],
        )
        .unwrap();
        let text = serialize_signature(&sig);
        let reparsed = parse_signature(&text).unwrap();
        assert_eq!(reparsed, sig);
        assert_eq!(serialize_signature(&reparsed), text);
    }

    #[test]
    fn signature_set_rejects_duplicates() {
        let p0 = TimedPacket::new(base("d", "s", 1, 10), 0);
        let sig = Signature::new("act", "dev", vec![p0], vec![]).unwrap();
        assert!(SignatureSet::new(vec![sig.clone(), sig]).is_err());
    }

    #[test]
    fn home_prefix_membership() {
        let home = HomePrefix::parse("192.168.1.0/24").unwrap();
        assert!(home.contains("192.168.1.200"));
        assert!(!home.contains("192.168.2.1"));
        assert!(!home.contains("not-an-ip"));
        assert!(HomePrefix::parse("10.0.0.0/33").is_none());
    }
}
