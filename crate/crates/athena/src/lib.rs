//! Activity fingerprinting for smart-home network traffic.
//!
//! Devices answer app commands, button presses, and automation triggers
//! with short, repeatable bursts of packets whose inter-packet time
//! intervals are stable enough to act as a fingerprint. This crate turns
//! repeated labeled captures into timed packet-sequence signatures, finds
//! every tolerance-valid occurrence of a signature in a traffic log via a
//! layered match DAG, and replays a whole signature set over a log to
//! recover the device's activity sequence.
//!
//! The pipeline, end to end:
//!
//! 1. [`pcap`] ingests raw captures into the canonical log form.
//! 2. [`background`] learns and strips a device's idle chatter.
//! 3. [`siggen`] aggregates repeated captures into a [`model::Signature`]
//!    with per-gap interval statistics and derives matching tolerances.
//! 4. [`matching`] builds the match DAG and extracts matches.
//! 5. [`extract`] turns per-device logs plus signature sets into ordered
//!    activity events, flagging packets claimed by two signatures at once.
//! 6. [`eval`] synthesizes ground-truth traffic and scores extraction
//!    accuracy, precision, and recall.
//!
//! The `examples/` directory contains one runnable example per capability;
//! the `athena` binary exposes the same operations as subcommands.

pub mod background;
pub mod cli;
pub mod eval;
pub mod extract;
pub mod matching;
pub mod model;
pub mod pcap;
pub mod siggen;

pub use background::{classify, filter_background, learn_silent_profile, BackgroundRuleSet};
pub use extract::{act_extract, extract_all_devices, ActivityEvent, Extraction};
pub use matching::{
    delta_valid, earliest_match, enumerate_matches, nonoverlapping_matches, sig_match, Match,
    MatchDag,
};
pub use model::{
    cluster_by_device, normalize_packet, parse_log, parse_signature, serialize_log,
    serialize_signature, BasePacket, Signature, SignatureSet, TimedPacket, TrafficLog,
};
pub use pcap::{ingest, read_pcap};
pub use siggen::{
    align_captures, generate_signature, tolerance_vector, LabeledCapture, SigGenOptions,
    ToleranceVector,
};
