//! Legacy pcap ingestion: Ethernet / IPv4 / TCP+UDP header decoding into
//! raw packet records, and conversion to the canonical log form.
//!
//! Only the classic pcap container is supported (16-byte record headers,
//! microsecond timestamps, link type Ethernet). pcapng, VLAN tags, IPv6 and
//! fragment reassembly are out of scope; tcpdump output and the test
//! fixtures fit in the supported subset.

use thiserror::Error;

use crate::model::{
    normalize_packet, HomePrefix, NameTable, Protocol, TimedPacket, TrafficLog,
};

const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
const PCAP_MAGIC_SWAPPED: u32 = 0xd4c3_b2a1;
const LINKTYPE_ETHERNET: u32 = 1;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const ETHERTYPE_IPV4: u16 = 0x0800;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PcapError {
    #[error("bad pcap magic")]
    BadMagic,
    #[error("truncated record at offset {0}")]
    TruncatedRecord(usize),
    #[error("unsupported link type {0}")]
    UnsupportedLinkType(u32),
}

/// One decoded capture record before normalization. Ports are present only
/// for TCP/UDP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacketRecord {
    /// Capture timestamp in integer microseconds.
    pub t_us: i64,
    pub src_addr: String,
    pub dst_addr: String,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub protocol: Protocol,
    /// IP total length in bytes.
    pub total_length: u32,
}

/// Warnings emitted by [`ingest`] for conditions that do not abort the run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestWarning {
    /// A timestamp collided with its predecessor and was nudged forward.
    PerturbedTimestamp { original_us: i64, adjusted_us: i64 },
    /// Both endpoints were inside the home prefix; LAN-internal noise.
    DroppedLanInternal { t_us: i64 },
    /// Neither endpoint was inside the home prefix; direction is undecidable.
    DroppedNoHomeEndpoint { t_us: i64 },
}

/// Result of [`ingest`]: the canonical log plus any warnings.
#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub log: TrafficLog,
    pub warnings: Vec<IngestWarning>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    swapped: bool,
}

impl<'a> Reader<'a> {
    fn u32_at(&self, off: usize) -> u32 {
        let raw = [
            self.bytes[off],
            self.bytes[off + 1],
            self.bytes[off + 2],
            self.bytes[off + 3],
        ];
        if self.swapped {
            u32::from_be_bytes(raw)
        } else {
            u32::from_le_bytes(raw)
        }
    }
}

fn ipv4_string(bytes: &[u8]) -> String {
    format!("{}.{}.{}.{}", bytes[0], bytes[1], bytes[2], bytes[3])
}

/// Decode a legacy pcap byte stream into records, file order preserved.
/// Non-IPv4 frames (ARP and friends) are skipped; truncated headers abort
/// with the record offset.
pub fn read_pcap(bytes: &[u8]) -> Result<Vec<RawPacketRecord>, PcapError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(PcapError::BadMagic);
    }
    let magic_le = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let swapped = match magic_le {
        PCAP_MAGIC => false,
        PCAP_MAGIC_SWAPPED => true,
        _ => return Err(PcapError::BadMagic),
    };
    let r = Reader { bytes, swapped };
    let linktype = r.u32_at(20);
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(linktype));
    }

    let mut records = Vec::new();
    let mut off = GLOBAL_HEADER_LEN;
    while off < bytes.len() {
        if off + RECORD_HEADER_LEN > bytes.len() {
            return Err(PcapError::TruncatedRecord(off));
        }
        let ts_sec = r.u32_at(off) as i64;
        let ts_usec = r.u32_at(off + 4) as i64;
        let incl_len = r.u32_at(off + 8) as usize;
        let data_off = off + RECORD_HEADER_LEN;
        if data_off + incl_len > bytes.len() {
            return Err(PcapError::TruncatedRecord(off));
        }
        let frame = &bytes[data_off..data_off + incl_len];
        if let Some(record) = decode_frame(frame, ts_sec * 1_000_000 + ts_usec)
            .map_err(|_| PcapError::TruncatedRecord(off))?
        {
            records.push(record);
        }
        off = data_off + incl_len;
    }
    Ok(records)
}

// Ok(None) = frame intentionally skipped (not IPv4); Err = headers cut short.
fn decode_frame(frame: &[u8], t_us: i64) -> Result<Option<RawPacketRecord>, ()> {
    if frame.len() < 14 {
        return Err(());
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    if ethertype != ETHERTYPE_IPV4 {
        return Ok(None);
    }
    let ip = &frame[14..];
    if ip.len() < 20 {
        return Err(());
    }
    if ip[0] >> 4 != 4 {
        return Ok(None);
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(());
    }
    let total_length = u32::from(u16::from_be_bytes([ip[2], ip[3]]));
    let proto_code = ip[9];
    let src_addr = ipv4_string(&ip[12..16]);
    let dst_addr = ipv4_string(&ip[16..20]);
    let protocol = Protocol::from_ip_proto(proto_code);
    let (src_port, dst_port) = match protocol {
        Protocol::Tcp | Protocol::Udp => {
            let transport = &ip[ihl..];
            if transport.len() < 4 {
                return Err(());
            }
            (
                Some(u16::from_be_bytes([transport[0], transport[1]])),
                Some(u16::from_be_bytes([transport[2], transport[3]])),
            )
        }
        Protocol::Other(_) => (None, None),
    };
    Ok(Some(RawPacketRecord {
        t_us,
        src_addr,
        dst_addr,
        src_port,
        dst_port,
        protocol,
        total_length,
    }))
}

/// Convert a pcap capture into a canonical traffic log: decode, drop
/// LAN-internal packets, normalize endpoints, sort by timestamp, and nudge
/// colliding timestamps forward by 1us in arrival order.
pub fn ingest(
    bytes: &[u8],
    home: &HomePrefix,
    names: &NameTable,
) -> Result<IngestOutput, PcapError> {
    let records = read_pcap(bytes)?;
    let mut warnings = Vec::new();
    let mut kept: Vec<TimedPacket> = Vec::new();
    for raw in &records {
        let src_home = home.contains(&raw.src_addr);
        let dst_home = home.contains(&raw.dst_addr);
        if src_home && dst_home {
            warnings.push(IngestWarning::DroppedLanInternal { t_us: raw.t_us });
            continue;
        }
        if !src_home && !dst_home {
            warnings.push(IngestWarning::DroppedNoHomeEndpoint { t_us: raw.t_us });
            continue;
        }
        kept.push(TimedPacket::new(normalize_packet(raw, home, names), raw.t_us));
    }
    // stable sort keeps arrival order among equal stamps
    kept.sort_by_key(|p| p.t_us);
    let mut prev: Option<i64> = None;
    for p in &mut kept {
        if let Some(prev_t) = prev {
            if p.t_us <= prev_t {
                let adjusted = prev_t + 1;
                warnings.push(IngestWarning::PerturbedTimestamp {
                    original_us: p.t_us,
                    adjusted_us: adjusted,
                });
                p.t_us = adjusted;
            }
        }
        prev = Some(p.t_us);
    }
    let log = TrafficLog::new(kept).expect("sorted and perturbed timestamps strictly increase");
    Ok(IngestOutput { log, warnings })
}

pub mod builder {
    //! Minimal legacy-pcap writer for crafting capture fixtures.

    /// Start a little-endian pcap file with an Ethernet link type.
    pub fn global_header() -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&0xa1b2_c3d4u32.to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes()); // version major
        out.extend_from_slice(&4u16.to_le_bytes()); // version minor
        out.extend_from_slice(&0i32.to_le_bytes()); // thiszone
        out.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
        out.extend_from_slice(&65535u32.to_le_bytes()); // snaplen
        out.extend_from_slice(&1u32.to_le_bytes()); // linktype ethernet
        out
    }

    /// Append one UDP or TCP packet record with the given payload length.
    #[allow(clippy::too_many_arguments)]
    pub fn push_packet(
        out: &mut Vec<u8>,
        ts_sec: u32,
        ts_usec: u32,
        src: [u8; 4],
        dst: [u8; 4],
        src_port: u16,
        dst_port: u16,
        proto: u8,
        payload_len: u16,
    ) {
        let transport_header = if proto == 6 { 20u16 } else { 8u16 };
        let ip_total = 20 + transport_header + payload_len;
        let frame_len = 14 + ip_total as usize;
        out.extend_from_slice(&ts_sec.to_le_bytes());
        out.extend_from_slice(&ts_usec.to_le_bytes());
        out.extend_from_slice(&(frame_len as u32).to_le_bytes()); // incl_len
        out.extend_from_slice(&(frame_len as u32).to_le_bytes()); // orig_len

        // ethernet
        out.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]); // dst mac
        out.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]); // src mac
        out.extend_from_slice(&0x0800u16.to_be_bytes());
        // ipv4, no options
        out.push(0x45);
        out.push(0);
        out.extend_from_slice(&ip_total.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]); // id, flags+frag
        out.push(64); // ttl
        out.push(proto);
        out.extend_from_slice(&[0, 0]); // checksum (unchecked)
        out.extend_from_slice(&src);
        out.extend_from_slice(&dst);
        // transport header: ports first, remainder zeroed
        out.extend_from_slice(&src_port.to_be_bytes());
        out.extend_from_slice(&dst_port.to_be_bytes());
        for _ in 4..transport_header {
            out.push(0);
        }
        for _ in 0..payload_len {
            out.push(0xaa);
        }
    }
}
