//! Recover a device's activity timeline from a day's traffic: synthesize
//! ground truth for two lock activities whose base-packet sequences overlap
//! (one is a subsequence of the other), strip background chatter, and run
//! the extraction loop.
//!
//! Run with: `cargo run --example extract_activities`

use athena::background::{filter_background, BackgroundRuleSet};
use athena::extract::{act_extract, tolerance_map};
use athena::eval::{synthesize, NoiseModel};
use athena::model::{parse_signature, SignatureSet};

const WIFI_SIG: &str = include_str!("../tests/fixtures/august_wifi_unlocking.sig");
const BLUETOOTH_SIG: &str = include_str!("../tests/fixtures/august_bluetooth_unlocking.sig");

fn main() {
    let wifi = parse_signature(WIFI_SIG).expect("wifi signature parses");
    let bluetooth = parse_signature(BLUETOOTH_SIG).expect("bluetooth signature parses");
    println!(
        "loaded signatures: {} ({} packets), {} ({} packets)",
        wifi.activity_name,
        wifi.len(),
        bluetooth.activity_name,
        bluetooth.len()
    );

    let set = SignatureSet::new(vec![wifi, bluetooth]).expect("distinct names");
    let schedule = vec![
        ("bluetooth-(un)locking".to_string(), 5_000_000),
        ("wifi-(un)locking".to_string(), 30_000_000),
        ("bluetooth-(un)locking".to_string(), 60_000_000),
    ];
    let noise = NoiseModel {
        chatter_per_minute: 8.0,
        ..NoiseModel::silent()
    };
    let truth = synthesize(&set, &schedule, &noise, 42).expect("sequential schedule");
    println!("synthesized log: {} packets including chatter", truth.log.len());

    let (foreground, background) =
        filter_background(&truth.log, &BackgroundRuleSet::default_well_known());
    println!(
        "background filter kept {} packets, removed {}",
        foreground.len(),
        background.len()
    );

    let tols = tolerance_map(&set, 11.0, 100);
    let extraction = act_extract(&foreground, &set, &tols).expect("tolerances supplied");
    println!("\nrecovered timeline:");
    for event in &extraction.events {
        println!(
            "  {:>10.3}s .. {:>10.3}s  {}",
            event.start_t_us as f64 / 1e6,
            event.end_t_us as f64 / 1e6,
            event.activity_name
        );
    }
    println!("residual packets: {}", extraction.residual.len());
    assert_eq!(
        extraction
            .events
            .iter()
            .map(|e| e.activity_name.as_str())
            .collect::<Vec<_>>(),
        schedule.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        "timeline matches the schedule"
    );
}
