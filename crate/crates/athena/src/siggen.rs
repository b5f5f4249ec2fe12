//! Signature generation: aggregate repeated labeled captures of one
//! activity into a signature with per-gap interval statistics, and derive
//! tolerance vectors from those statistics.
//!
//! Captures are aligned by exact base-packet sequence equality with a
//! majority quorum; deviating captures (a retransmission, a stray packet)
//! are discarded and reported. Interval statistics use the population
//! standard deviation so repeated runs over the same fixtures are
//! deterministic.

use thiserror::Error;

use crate::model::{
    BasePacket, IntervalStat, Protocol, Signature, TimedPacket, TrafficLog, MICROS_PER_SEC,
};

/// Default tolerance floor: 100us. Prevents zero-width matching windows
/// when a gap shows no variance at all.
pub const DEFAULT_EPS_FLOOR_US: i64 = 100;

/// Default quorum fraction for modal-sequence alignment (strict majority).
pub const DEFAULT_QUORUM: f64 = 0.5;

/// TCP segments at or below this total length are treated as
/// protocol-control packets (handshake segments, pure ACKs) when the
/// control-packet prefilter is on. Only header bytes are visible at the
/// router, so the cut is by length.
pub const DEFAULT_TCP_CONTROL_MAX_LEN: u32 = 60;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SigGenError {
    #[error("need at least 2 captures, got {0}")]
    TooFewCaptures(usize),
    #[error("no base-packet sequence reaches the alignment quorum")]
    NoModalMajority,
    #[error("captures are inconsistent: {0}")]
    InconsistentCaptures(String),
}

/// One background-filtered capture of a single triggered activity.
#[derive(Debug, Clone)]
pub struct LabeledCapture {
    pub activity_name: String,
    pub device_label: String,
    pub foreground: TrafficLog,
}

/// Per-gap matching tolerances in microseconds, derived as
/// `eps_j = max(round(r * sigma_j), floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceVector {
    epsilons_us: Vec<i64>,
    r: f64,
}

impl ToleranceVector {
    pub fn from_signature(sig: &Signature, r: f64, eps_floor_us: i64) -> Self {
        let epsilons_us = sig
            .interval_stats()
            .iter()
            .map(|s| ((r * s.stdev_us).round() as i64).max(eps_floor_us))
            .collect();
        ToleranceVector { epsilons_us, r }
    }

    /// Build from explicit per-gap values; every entry is clamped to the floor.
    pub fn from_epsilons_us(epsilons_us: Vec<i64>, r: f64, eps_floor_us: i64) -> Self {
        ToleranceVector {
            epsilons_us: epsilons_us.into_iter().map(|e| e.max(eps_floor_us)).collect(),
            r,
        }
    }

    pub fn epsilons_us(&self) -> &[i64] {
        &self.epsilons_us
    }

    pub fn epsilons_secs(&self) -> Vec<f64> {
        self.epsilons_us
            .iter()
            .map(|&e| e as f64 / MICROS_PER_SEC)
            .collect()
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn len(&self) -> usize {
        self.epsilons_us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons_us.is_empty()
    }
}

/// Derive the tolerance vector for a signature: `eps_j = max(r*sigma_j, floor)`.
pub fn tolerance_vector(sig: &Signature, r: f64, eps_floor_us: i64) -> ToleranceVector {
    ToleranceVector::from_signature(sig, r, eps_floor_us)
}

/// Knobs for capture alignment and signature generation.
#[derive(Debug, Clone)]
pub struct SigGenOptions {
    /// Fraction of captures the modal sequence must strictly exceed.
    pub quorum: f64,
    /// Drop short TCP segments (handshake, pure ACKs) before alignment.
    pub drop_tcp_control: bool,
    pub tcp_control_max_len: u32,
}

impl Default for SigGenOptions {
    fn default() -> Self {
        SigGenOptions {
            quorum: DEFAULT_QUORUM,
            drop_tcp_control: true,
            tcp_control_max_len: DEFAULT_TCP_CONTROL_MAX_LEN,
        }
    }
}

/// Result of aligning captures on their modal base-packet sequence.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub modal_bases: Vec<BasePacket>,
    /// One gap vector (microseconds) per surviving capture.
    pub gap_vectors: Vec<Vec<i64>>,
    /// Indices of discarded captures in the input order.
    pub discarded: Vec<usize>,
}

fn effective_packets(capture: &TrafficLog, opts: &SigGenOptions) -> Vec<TimedPacket> {
    capture
        .packets()
        .iter()
        .filter(|p| {
            !(opts.drop_tcp_control
                && p.base.protocol == Protocol::Tcp
                && p.base.length <= opts.tcp_control_max_len)
        })
        .cloned()
        .collect()
}

/// Align captures by exact base-sequence equality: the modal sequence must
/// hold a strict majority (quorum); captures that deviate are discarded.
pub fn align_captures(
    captures: &[LabeledCapture],
    opts: &SigGenOptions,
) -> Result<Alignment, SigGenError> {
    if captures.len() < 2 {
        return Err(SigGenError::TooFewCaptures(captures.len()));
    }
    let projected: Vec<Vec<TimedPacket>> = captures
        .iter()
        .map(|c| effective_packets(&c.foreground, opts))
        .collect();
    let base_seqs: Vec<Vec<BasePacket>> = projected
        .iter()
        .map(|pkts| pkts.iter().map(|p| p.base.clone()).collect())
        .collect();

    // count identical sequences; first-seen order keeps ties deterministic
    let mut distinct: Vec<(&Vec<BasePacket>, usize)> = Vec::new();
    for seq in &base_seqs {
        match distinct.iter_mut().find(|(s, _)| *s == seq) {
            Some((_, count)) => *count += 1,
            None => distinct.push((seq, 1)),
        }
    }
    let total = captures.len();
    let modal = distinct
        .iter()
        .max_by_key(|(_, count)| *count)
        .filter(|(_, count)| (*count as f64) > opts.quorum * total as f64)
        .map(|(seq, _)| (*seq).clone())
        .ok_or(SigGenError::NoModalMajority)?;
    if modal.is_empty() {
        return Err(SigGenError::InconsistentCaptures(
            "modal foreground sequence is empty".into(),
        ));
    }

    let mut gap_vectors = Vec::new();
    let mut discarded = Vec::new();
    for (idx, pkts) in projected.iter().enumerate() {
        if base_seqs[idx] == modal {
            gap_vectors.push(pkts.windows(2).map(|w| w[1].t_us - w[0].t_us).collect());
        } else {
            discarded.push(idx);
        }
    }
    Ok(Alignment {
        modal_bases: modal,
        gap_vectors,
        discarded,
    })
}

// Welford's online mean/variance; population variance (divide by N).
fn online_stats(values: &[i64]) -> (f64, f64) {
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for (k, &v) in values.iter().enumerate() {
        let x = v as f64;
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    (mean, (m2 / values.len() as f64).sqrt())
}

/// Aggregate repeated captures of one activity into a signature: the modal
/// base-packet sequence with relative timestamps rebuilt from per-gap mean
/// intervals, and per-gap mean/stdev/count statistics.
pub fn generate_signature(
    captures: &[LabeledCapture],
    opts: &SigGenOptions,
) -> Result<Signature, SigGenError> {
    if captures.len() < 2 {
        return Err(SigGenError::TooFewCaptures(captures.len()));
    }
    let first = &captures[0];
    if captures
        .iter()
        .any(|c| c.activity_name != first.activity_name || c.device_label != first.device_label)
    {
        return Err(SigGenError::InconsistentCaptures(
            "captures carry differing activity or device labels".into(),
        ));
    }
    let alignment = align_captures(captures, opts)?;
    let survivors = alignment.gap_vectors.len() as u32;
    let n = alignment.modal_bases.len();

    let mut stats = Vec::with_capacity(n - 1);
    for j in 0..n.saturating_sub(1) {
        let column: Vec<i64> = alignment.gap_vectors.iter().map(|g| g[j]).collect();
        let (mean_us, stdev_us) = online_stats(&column);
        stats.push(IntervalStat {
            mean_us,
            stdev_us,
            sample_count: survivors,
        });
    }

    let mut packets = Vec::with_capacity(n);
    let mut cumulative = 0.0f64;
    for (j, base) in alignment.modal_bases.into_iter().enumerate() {
        let t_us = if j == 0 {
            0
        } else {
            cumulative += stats[j - 1].mean_us;
            cumulative.round() as i64
        };
        packets.push(TimedPacket::new(base, t_us));
    }

    Signature::new(&first.activity_name, &first.device_label, packets, stats)
        .map_err(|e| SigGenError::InconsistentCaptures(e.to_string()))
}
