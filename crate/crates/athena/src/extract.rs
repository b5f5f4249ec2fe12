//! Activity extraction: replay a device's signature set over its foreground
//! log and emit the ordered activity sequence.
//!
//! Each round builds the match DAG for every signature on the remaining
//! log, picks the signature whose earliest match comes first, emits that
//! activity, and removes every packet up to and including the last matched
//! one. Under the normal assumption (all packets of an earlier activity
//! precede every packet of a later one) this recovers the exact ground
//! truth sequence. Packets claimed by two signatures' earliest matches in
//! the same round are reported as anomalies.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::matching::{earliest_match, nonoverlapping_matches, sig_match, Match, MatchError};
use crate::model::{cluster_by_device, Signature, SignatureSet, TimedPacket, TrafficLog};
use crate::siggen::ToleranceVector;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no tolerance vector supplied for signature {0}")]
    MissingTolerance(String),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// One extracted activity occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityEvent {
    pub activity_name: String,
    /// 0-based indices of the matched packets in the log that was searched.
    pub matched: Match,
    pub start_t_us: i64,
    pub end_t_us: i64,
}

/// A packet claimed by two or more signatures' earliest matches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyReport {
    pub packet_index: usize,
    /// Sorted names of the claiming signatures, always two or more.
    pub signatures: Vec<String>,
}

/// Extraction output: ordered events, anomaly reports, and the residual.
/// In sequential mode the residual holds the packets still unremoved when
/// no signature matches any more; packets inside a removed prefix are
/// discarded with it. In concurrent mode it holds every unmatched packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub events: Vec<ActivityEvent>,
    pub anomalies: Vec<AnomalyReport>,
    pub residual: TrafficLog,
}

/// Ordering used to select among earliest matches across signatures: by
/// first index, then by last index (earlier completion), then by activity
/// name, then by the full index sequence.
pub fn compare_order(a: &Match, name_a: &str, b: &Match, name_b: &str) -> Ordering {
    a.first()
        .cmp(&b.first())
        .then(a.last().cmp(&b.last()))
        .then(name_a.cmp(name_b))
        .then(a.indices().cmp(b.indices()))
}

/// Per-signature tolerance vectors keyed by activity name.
pub type ToleranceMap = BTreeMap<String, ToleranceVector>;

/// Derive a tolerance map for a whole signature set.
pub fn tolerance_map(sigs: &SignatureSet, r: f64, eps_floor_us: i64) -> ToleranceMap {
    sigs.signatures()
        .iter()
        .map(|s| {
            (
                s.activity_name.clone(),
                ToleranceVector::from_signature(s, r, eps_floor_us),
            )
        })
        .collect()
}

fn tolerance_for<'t>(
    tols: &'t ToleranceMap,
    sig: &Signature,
) -> Result<&'t ToleranceVector, ExtractError> {
    tols.get(&sig.activity_name)
        .ok_or_else(|| ExtractError::MissingTolerance(sig.activity_name.clone()))
}

/// Unveil the ordered activity sequence of one device from its foreground
/// log. Unmatched traffic lands in the residual; it is not an error.
pub fn act_extract(
    log: &TrafficLog,
    sigs: &SignatureSet,
    tols: &ToleranceMap,
) -> Result<Extraction, ExtractError> {
    for sig in sigs.signatures() {
        tolerance_for(tols, sig)?;
    }

    let mut remaining: Vec<usize> = (0..log.len()).collect();
    let mut events = Vec::new();
    let mut anomalies: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();

    loop {
        let packets: Vec<TimedPacket> = remaining
            .iter()
            .map(|&i| log.packets()[i].clone())
            .collect();
        let view = TrafficLog::new(packets).expect("subsequence stays monotonic");

        // earliest match per signature on the remaining log
        let mut round: Vec<(Match, &Signature)> = Vec::new();
        for sig in sigs.signatures() {
            let dag = sig_match(&view, sig, tolerance_for(tols, sig)?)?;
            if let Some(m) = earliest_match(&dag) {
                let original = Match::new(m.indices().iter().map(|&i| remaining[i]).collect());
                round.push((original, sig));
            }
        }
        let Some((winner, winner_sig)) = round
            .iter()
            .min_by(|(ma, sa), (mb, sb)| {
                compare_order(ma, &sa.activity_name, mb, &sb.activity_name)
            })
            .cloned()
        else {
            break;
        };

        // conflicts: one packet claimed by several signatures this round
        let mut claims: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for (m, sig) in &round {
            for &i in m.indices() {
                claims.entry(i).or_default().insert(sig.activity_name.clone());
            }
        }
        for (idx, names) in claims {
            if names.len() >= 2 {
                anomalies.entry(idx).or_default().extend(names);
            }
        }

        let end_t = log.packets()[winner.last()].t_us;
        events.push(ActivityEvent {
            activity_name: winner_sig.activity_name.clone(),
            start_t_us: log.packets()[winner.first()].t_us,
            end_t_us: end_t,
            matched: winner.clone(),
        });

        // remove the whole prefix up to the end of the emitted match;
        // unmatched packets inside it are discarded along with it
        remaining.retain(|&i| log.packets()[i].t_us > end_t);
    }

    let residual_packets: Vec<TimedPacket> = remaining
        .iter()
        .map(|&i| log.packets()[i].clone())
        .collect();
    let residual = {
        let base = TrafficLog::new(residual_packets).expect("subsequence stays monotonic");
        match log.device_addr() {
            Some(addr) => base.with_device(addr).expect("device tag carried over"),
            None => base,
        }
    };

    Ok(Extraction {
        events,
        anomalies: anomalies
            .into_iter()
            .map(|(packet_index, names)| AnomalyReport {
                packet_index,
                signatures: names.into_iter().collect(),
            })
            .collect(),
        residual,
    })
}

/// Concurrent-device variant: take each signature's non-overlapping matches
/// independently and merge, instead of round-based prefix removal. Used for
/// devices that can run two activities at once.
pub fn extract_concurrent(
    log: &TrafficLog,
    sigs: &SignatureSet,
    tols: &ToleranceMap,
) -> Result<Extraction, ExtractError> {
    let mut events = Vec::new();
    let mut claims: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for sig in sigs.signatures() {
        let eps = tolerance_for(tols, sig)?;
        for m in nonoverlapping_matches(log, sig, eps)? {
            for &i in m.indices() {
                claims.entry(i).or_default().insert(sig.activity_name.clone());
            }
            events.push(ActivityEvent {
                activity_name: sig.activity_name.clone(),
                start_t_us: log.packets()[m.first()].t_us,
                end_t_us: log.packets()[m.last()].t_us,
                matched: m,
            });
        }
    }
    events.sort_by(|a, b| {
        a.end_t_us
            .cmp(&b.end_t_us)
            .then_with(|| compare_order(&a.matched, &a.activity_name, &b.matched, &b.activity_name))
    });

    let matched_any: BTreeSet<usize> = events
        .iter()
        .flat_map(|e| e.matched.indices().iter().copied())
        .collect();
    let residual_packets: Vec<TimedPacket> = (0..log.len())
        .filter(|i| !matched_any.contains(i))
        .map(|i| log.packets()[i].clone())
        .collect();
    let residual = {
        let base = TrafficLog::new(residual_packets).expect("subsequence stays monotonic");
        match log.device_addr() {
            Some(addr) => base.with_device(addr).expect("device tag carried over"),
            None => base,
        }
    };

    Ok(Extraction {
        events,
        anomalies: claims
            .into_iter()
            .filter(|(_, names)| names.len() >= 2)
            .map(|(packet_index, names)| AnomalyReport {
                packet_index,
                signatures: names.into_iter().collect(),
            })
            .collect(),
        residual,
    })
}

/// Signature set plus tolerances for one device.
#[derive(Debug, Clone)]
pub struct MatchProfile {
    pub signatures: SignatureSet,
    pub tolerances: ToleranceMap,
}

impl MatchProfile {
    pub fn new(signatures: SignatureSet, r: f64, eps_floor_us: i64) -> Self {
        let tolerances = tolerance_map(&signatures, r, eps_floor_us);
        MatchProfile {
            signatures,
            tolerances,
        }
    }
}

/// Extraction over a mixed log: cluster by device address, run extraction
/// per device with that device's profile. Devices with no profile are
/// listed, not fatal. Match indices refer to each device's sublog.
#[derive(Debug, Clone)]
pub struct AllDevicesExtraction {
    pub per_device: BTreeMap<String, Extraction>,
    pub unknown_devices: Vec<String>,
}

pub fn extract_all_devices(
    mixed_log: &TrafficLog,
    profiles: &BTreeMap<String, MatchProfile>,
) -> Result<AllDevicesExtraction, ExtractError> {
    let mut per_device = BTreeMap::new();
    let mut unknown_devices = Vec::new();
    for (device, sublog) in cluster_by_device(mixed_log) {
        match profiles.get(&device) {
            Some(profile) => {
                per_device.insert(
                    device,
                    act_extract(&sublog, &profile.signatures, &profile.tolerances)?,
                );
            }
            None => unknown_devices.push(device),
        }
    }
    Ok(AllDevicesExtraction {
        per_device,
        unknown_devices,
    })
}
