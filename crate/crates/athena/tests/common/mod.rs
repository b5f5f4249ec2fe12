//! Shared test support: an implementation-independent brute-force oracle
//! for tolerance-valid matches, random instance generation, and fixture
//! builders.
//!
//! The oracle enumerates increasing index tuples straight from the match
//! definition (base equality plus per-gap interval bounds). It never looks
//! at the DAG; pruning a prefix only skips tuples that already violate one
//! adjacent pair, which the definition itself rules out.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use athena::model::{
    BasePacket, Direction, IntervalStat, Protocol, Signature, SignatureSet, TimedPacket,
    TrafficLog,
};
use athena::siggen::ToleranceVector;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).expect("fixture readable")
}

/// Base packet alphabet for random instances: letters vary the length only.
pub fn letter_base(letter: u8) -> BasePacket {
    BasePacket {
        device_addr: "dev".into(),
        server_name: "srv.example".into(),
        server_port: 443,
        protocol: Protocol::Tcp,
        direction: Direction::DeviceToServer,
        length: 100 + u32::from(letter),
        payload_digest: None,
    }
}

pub fn log_of(letters: &[u8], times_us: &[i64]) -> TrafficLog {
    TrafficLog::new(
        letters
            .iter()
            .zip(times_us)
            .map(|(&l, &t)| TimedPacket::new(letter_base(l), t))
            .collect(),
    )
    .expect("strictly increasing times")
}

pub fn sig_of(name: &str, letters: &[u8], times_us: &[i64]) -> Signature {
    let packets: Vec<TimedPacket> = letters
        .iter()
        .zip(times_us)
        .map(|(&l, &t)| TimedPacket::new(letter_base(l), t))
        .collect();
    let stats: Vec<IntervalStat> = times_us
        .windows(2)
        .map(|w| IntervalStat {
            mean_us: (w[1] - w[0]) as f64,
            stdev_us: 0.0,
            sample_count: 2,
        })
        .collect();
    Signature::new(name, "dev", packets, stats).expect("valid signature")
}

/// Every tolerance-valid match of `sig` in `log`, from the definition:
/// an increasing index tuple where each adjacent pair agrees on base
/// identity and lands within the per-gap tolerance. Sorted.
pub fn oracle_matches(log: &TrafficLog, sig: &Signature, eps: &ToleranceVector) -> Vec<Vec<usize>> {
    fn extend(
        log: &TrafficLog,
        sig: &Signature,
        eps: &ToleranceVector,
        prefix: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let j = prefix.len();
        if j == sig.len() {
            out.push(prefix.clone());
            return;
        }
        let start = prefix.last().map(|&i| i + 1).unwrap_or(0);
        for i in start..log.len() {
            let p = &log.packets()[i];
            if p.base != sig.packets()[j].base {
                continue;
            }
            if j > 0 {
                let prev = &log.packets()[prefix[j - 1]];
                let observed = p.t_us - prev.t_us;
                let expected = sig.packets()[j].t_us - sig.packets()[j - 1].t_us;
                if (observed - expected).abs() > eps.epsilons_us()[j - 1] {
                    continue;
                }
            }
            prefix.push(i);
            extend(log, sig, eps, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(log, sig, eps, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// A random matching instance for the oracle-equivalence properties:
/// log of up to 40 packets, signature of up to 6, base alphabet of up to 4
/// letters, random per-gap tolerances.
pub struct RandomInstance {
    pub log: TrafficLog,
    pub sig: Signature,
    pub eps: ToleranceVector,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> RandomInstance {
    let base_m = rng.random_range(0..=28);
    let n = rng.random_range(1..=6);
    let alphabet = rng.random_range(1..=4);

    let sig_letters: Vec<u8> = (0..n).map(|_| rng.random_range(0..alphabet)).collect();
    let mut ts = 0i64;
    let sig_times: Vec<i64> = (0..n)
        .map(|i| {
            if i > 0 {
                ts += rng.random_range(100..=1_500);
            }
            ts
        })
        .collect();
    let eps_values: Vec<i64> = (0..n - 1).map(|_| rng.random_range(1..=800)).collect();

    // background stream of random packets
    let mut stream: Vec<(u8, i64)> = Vec::new();
    let mut t = rng.random_range(0..=1_000_000i64);
    for _ in 0..base_m {
        t += rng.random_range(1..=2_000);
        stream.push((rng.random_range(0..alphabet), t));
    }

    // embed up to two jittered copies of the signature so real matches are
    // common; jitter stays within tolerance before collision nudging, and
    // the oracle comparison is unconditional either way (m stays <= 40)
    let copies = rng.random_range(0..=2);
    let span = t.max(1);
    for _ in 0..copies {
        let mut at = rng.random_range(0..=span);
        for (j, &letter) in sig_letters.iter().enumerate() {
            if j > 0 {
                let tau = sig_times[j] - sig_times[j - 1];
                let slack = (eps_values[j - 1] - 2).max(0);
                at += tau + rng.random_range(-slack..=slack);
            }
            stream.push((letter, at));
        }
    }
    stream.sort_by_key(|&(_, time)| time);
    let mut prev: Option<i64> = None;
    for entry in &mut stream {
        if let Some(p) = prev {
            if entry.1 <= p {
                entry.1 = p + 1;
            }
        }
        prev = Some(entry.1);
    }
    let log_letters: Vec<u8> = stream.iter().map(|&(l, _)| l).collect();
    let log_times: Vec<i64> = stream.iter().map(|&(_, time)| time).collect();

    RandomInstance {
        log: log_of(&log_letters, &log_times),
        sig: sig_of("random", &sig_letters, &sig_times),
        eps: ToleranceVector::from_epsilons_us(eps_values, 1.0, 1),
    }
}

fn plug_base(pos: u8, direction: Direction) -> BasePacket {
    BasePacket {
        device_addr: "plug".into(),
        server_name: "plug.cloud.example".into(),
        server_port: 443,
        protocol: Protocol::Tcp,
        direction,
        length: 200 + 110 * u32::from(pos),
        payload_digest: None,
    }
}

/// Four-packet plug activity used by the sensitivity experiments: distinct
/// bases, gaps 1.0s / 0.5s / 0.8s, 10ms standard deviation per gap.
pub fn sweep_signature() -> Signature {
    let dirs = [
        Direction::DeviceToServer,
        Direction::ServerToDevice,
        Direction::DeviceToServer,
        Direction::ServerToDevice,
    ];
    let times = [0i64, 1_000_000, 1_500_000, 2_300_000];
    let packets: Vec<TimedPacket> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| TimedPacket::new(plug_base(i as u8, dirs[i]), t))
        .collect();
    let stats: Vec<IntervalStat> = times
        .windows(2)
        .map(|w| IntervalStat {
            mean_us: (w[1] - w[0]) as f64,
            stdev_us: 10_000.0,
            sample_count: 100,
        })
        .collect();
    Signature::new("plug-on", "plug", packets, stats).unwrap()
}

/// Five signatures with pairwise disjoint base alphabets, 3 to 5 packets
/// each, for sequence-recovery experiments.
pub fn five_signature_set() -> SignatureSet {
    let mut sigs = Vec::new();
    for k in 0..5u8 {
        let n = 3 + (k as usize % 3);
        let mut t = 0i64;
        let mut times = vec![0i64];
        for j in 0..n - 1 {
            t += 300_000 + 150_000 * i64::from(k) + 90_000 * j as i64;
            times.push(t);
        }
        let packets: Vec<TimedPacket> = times
            .iter()
            .enumerate()
            .map(|(pos, &ts)| {
                TimedPacket::new(
                    BasePacket {
                        device_addr: "hub".into(),
                        server_name: format!("svc-{k}.example"),
                        server_port: 443,
                        protocol: Protocol::Tcp,
                        direction: if pos % 2 == 0 {
                            Direction::DeviceToServer
                        } else {
                            Direction::ServerToDevice
                        },
                        length: 100 + 16 * u32::from(k) + pos as u32,
                        payload_digest: None,
                    },
                    ts,
                )
            })
            .collect();
        let stats: Vec<IntervalStat> = times
            .windows(2)
            .map(|w| IntervalStat {
                mean_us: (w[1] - w[0]) as f64,
                stdev_us: 5_000.0 + 2_500.0 * f64::from(k),
                sample_count: 100,
            })
            .collect();
        sigs.push(Signature::new(&format!("act-{k}"), "hub", packets, stats).unwrap());
    }
    SignatureSet::new(sigs).unwrap()
}
