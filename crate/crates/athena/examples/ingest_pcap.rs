//! Decode a pcap capture into the canonical log format.
//!
//! Builds a four-packet capture in memory (two cloud round trips, one
//! LAN-internal mDNS packet that gets dropped, one timestamp collision that
//! gets nudged), then ingests it.
//!
//! Run with: `cargo run --example ingest_pcap`

use athena::model::{serialize_log, HomePrefix, NameTable};
use athena::pcap::{builder, ingest};

fn main() {
    let mut capture = builder::global_header();
    // device -> cloud, 637 byte request
    builder::push_packet(&mut capture, 10, 0, [192, 168, 1, 9], [34, 194, 121, 50], 49157, 443, 6, 597);
    // cloud -> device reply at the very same microsecond (collision)
    builder::push_packet(&mut capture, 10, 0, [34, 194, 121, 50], [192, 168, 1, 9], 443, 49157, 6, 197);
    // mDNS chatter between two local hosts: LAN-internal, dropped
    builder::push_packet(&mut capture, 10, 900, [192, 168, 1, 9], [192, 168, 1, 255], 5353, 5353, 17, 80);
    // NTP poll
    builder::push_packet(&mut capture, 11, 20, [192, 168, 1, 9], [129, 6, 15, 28], 40001, 123, 17, 48);

    let home = HomePrefix::parse("192.168.1.0/24").expect("valid prefix");
    let mut names = NameTable::empty();
    names.insert("34.194.121.50", "rbs.august.com");
    names.insert("129.6.15.28", "time.nist.gov");

    let out = ingest(&capture, &home, &names).expect("well-formed capture");
    println!("canonical log ({} packets):", out.log.len());
    print!("{}", serialize_log(&out.log));
    println!("warnings:");
    for w in &out.warnings {
        println!("  {w:?}");
    }
}
