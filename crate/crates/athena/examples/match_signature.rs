//! Build the match DAG of a signature in a log, enumerate every
//! tolerance-valid match, and extract the earliest one.
//!
//! The log interleaves two occurrences of a two-packet camera signature
//! with lookalike packets whose timing is off, showing how the interval
//! constraint prunes the match set.
//!
//! Run with: `cargo run --example match_signature`

use athena::matching::{earliest_match, enumerate_matches, nonoverlapping_matches, sig_match};
use athena::model::{parse_log, parse_signature};
use athena::siggen::tolerance_vector;

const SIGNATURE: &str = "\
# signature cam stream-on 2
0 cam cam.cloud.example 443 TCP D2S 333
1000000 cam cam.cloud.example 443 TCP S2D 512
interval 1 1000000 5000 100
";

const LOG: &str = "\
1000000 cam cam.cloud.example 443 TCP D2S 333
1200000 cam cam.cloud.example 443 TCP D2S 333
1998000 cam cam.cloud.example 443 TCP S2D 512
2201000 cam cam.cloud.example 443 TCP S2D 512
2600000 cam cam.cloud.example 443 TCP S2D 512
";

fn main() {
    let sig = parse_signature(SIGNATURE).expect("signature parses");
    let log = parse_log(LOG).expect("log parses");
    let tol = tolerance_vector(&sig, 11.0, 100);
    println!("tolerance vector: {:?} us", tol.epsilons_us());

    let dag = sig_match(&log, &sig, &tol).expect("dimensions agree");
    println!(
        "DAG: {} vertices, {} edges over m = {}, n = {}",
        dag.vertex_count(),
        dag.edge_count(),
        dag.m(),
        dag.n()
    );
    for (i, level) in dag.vertices() {
        println!("  vertex: log packet {} can play signature level {}", i + 1, level);
    }

    let all = enumerate_matches(&dag, 100);
    println!("all matches (1-based indices):");
    for m in &all.matches {
        println!("  {:?}", m.to_one_based());
    }
    println!(
        "earliest: {:?}",
        earliest_match(&dag).map(|m| m.to_one_based())
    );
    println!(
        "non-overlapping: {:?}",
        nonoverlapping_matches(&log, &sig, &tol)
            .unwrap()
            .iter()
            .map(|m| m.to_one_based())
            .collect::<Vec<_>>()
    );
}
