//! A whole-home run: several devices share one mixed traffic log; cluster
//! it by device address and extract each device's activity sequence with
//! its own signature set.
//!
//! Run with: `cargo run --example whole_home`

use std::collections::BTreeMap;

use athena::eval::{synthesize, NoiseModel};
use athena::extract::{extract_all_devices, MatchProfile};
use athena::model::{
    BasePacket, Direction, IntervalStat, Protocol, Signature, SignatureSet, TimedPacket,
    TrafficLog,
};

fn two_packet_sig(device: &str, name: &str, gap_us: i64, len_a: u32, len_b: u32) -> Signature {
    let base = |len| BasePacket {
        device_addr: device.to_string(),
        server_name: format!("{device}.cloud.example"),
        server_port: 443,
        protocol: Protocol::Tcp,
        direction: Direction::DeviceToServer,
        length: len,
        payload_digest: None,
    };
    Signature::new(
        name,
        device,
        vec![
            TimedPacket::new(base(len_a), 0),
            TimedPacket::new(base(len_b), gap_us),
        ],
        vec![IntervalStat {
            mean_us: gap_us as f64,
            stdev_us: 4_000.0,
            sample_count: 50,
        }],
    )
    .expect("valid signature")
}

fn main() {
    let lock_set = SignatureSet::new(vec![
        two_packet_sig("lock", "lock-unlock", 800_000, 413, 605),
        two_packet_sig("lock", "lock-status", 350_000, 221, 237),
    ])
    .unwrap();
    let plug_set = SignatureSet::new(vec![two_packet_sig("plug", "plug-on", 76_730, 210, 330)]).unwrap();

    // one mixed log: per-device schedules synthesized separately, merged by
    // timestamp
    let lock_truth = synthesize(
        &lock_set,
        &[
            ("lock-unlock".to_string(), 2_000_000),
            ("lock-status".to_string(), 9_000_000),
        ],
        &NoiseModel::silent(),
        1,
    )
    .unwrap();
    let plug_truth = synthesize(
        &plug_set,
        &[("plug-on".to_string(), 5_000_000)],
        &NoiseModel::silent(),
        2,
    )
    .unwrap();
    let mut merged: Vec<TimedPacket> = lock_truth
        .log
        .packets()
        .iter()
        .chain(plug_truth.log.packets())
        .cloned()
        .collect();
    merged.sort_by_key(|p| p.t_us);
    let mixed = TrafficLog::new(merged).expect("no timestamp collisions in this schedule");
    println!("mixed log: {} packets from 2 devices", mixed.len());

    let mut profiles = BTreeMap::new();
    profiles.insert("lock".to_string(), MatchProfile::new(lock_set, 11.0, 100));
    profiles.insert("plug".to_string(), MatchProfile::new(plug_set, 11.0, 100));

    let result = extract_all_devices(&mixed, &profiles).expect("profiles cover devices");
    for (device, extraction) in &result.per_device {
        println!("\ndevice {device}:");
        for event in &extraction.events {
            println!(
                "  {:>8.3}s  {}",
                event.end_t_us as f64 / 1e6,
                event.activity_name
            );
        }
    }
    if !result.unknown_devices.is_empty() {
        println!("devices without signatures: {:?}", result.unknown_devices);
    }
}
