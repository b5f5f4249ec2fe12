//! Aggregate repeated captures of one activity into a signature with
//! per-gap interval statistics, then derive its matching tolerances.
//!
//! Run with: `cargo run --example generate_signature`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use athena::model::{parse_log, serialize_signature};
use athena::siggen::{generate_signature, tolerance_vector, LabeledCapture, SigGenOptions};

fn main() {
    // thirty captures of a plug's "on" command: 2 gaps, the first wobbling
    // by a few milliseconds, the second nearly fixed
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let captures: Vec<LabeledCapture> = (0..30)
        .map(|_| {
            let gap1 = 76_730 + rng.random_range(-4_000..=4_000);
            let gap2 = 20 + rng.random_range(-3..=3i64);
            let text = format!(
                "0 plug plug.cloud.example 443 TCP D2S 210\n\
                 {gap1} plug plug.cloud.example 443 TCP S2D 330\n\
                 {} plug plug.cloud.example 443 TCP D2S 450\n",
                gap1 + gap2
            );
            LabeledCapture {
                activity_name: "on".into(),
                device_label: "tp-plug".into(),
                foreground: parse_log(&text).expect("capture parses"),
            }
        })
        .collect();

    let sig = generate_signature(&captures, &SigGenOptions::default()).expect("captures align");
    println!("signature file:");
    print!("{}", serialize_signature(&sig));

    for r in [1.0, 11.0, 30.0] {
        let tol = tolerance_vector(&sig, r, 100);
        println!("tolerances at r = {r:>4}: {:?} us", tol.epsilons_us());
    }
}
