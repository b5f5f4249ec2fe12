//! K-fold cross-validation of signature generation: split repeated captures
//! into folds, regenerate the signature from each training split, and score
//! extraction on the held-out captures.
//!
//! Run with: `cargo run --example cross_validate`

use athena::eval::{cross_validate, synthesize, NoiseModel, XvalOptions};
use athena::model::{parse_signature, SignatureSet};
use athena::siggen::LabeledCapture;

const BULB_SIG: &str = "\
# signature bulb bulb-on 3
0 bulb bulb.cloud.example 443 TCP D2S 198
210000 bulb bulb.cloud.example 443 TCP S2D 227
260000 bulb bulb.cloud.example 443 TCP D2S 339
interval 1 210000 3000 100
interval 2 50000 800 100
";

fn main() {
    let true_sig = parse_signature(BULB_SIG).expect("signature parses");
    let set = SignatureSet::new(vec![true_sig]).expect("one signature");

    // 24 captures of the activity, gaps drawn from the signature's own
    // interval statistics
    let captures: Vec<LabeledCapture> = (0..24)
        .map(|i| {
            let truth = synthesize(
                &set,
                &[("bulb-on".to_string(), 1_000_000)],
                &NoiseModel::silent(),
                7_000 + i,
            )
            .expect("single activity");
            LabeledCapture {
                activity_name: "bulb-on".into(),
                device_label: "bulb".into(),
                foreground: truth.log,
            }
        })
        .collect();

    let report = cross_validate(&captures, 4, 11.0, &XvalOptions::default()).expect("folds fit");
    println!("activity\tfold\ttrain\ttest\taccuracy\tprecision\trecall");
    for row in &report.rows {
        println!(
            "{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}",
            row.activity,
            row.fold,
            row.train_size,
            row.test_size,
            row.report.accuracy(),
            row.report.precision(),
            row.report.recall()
        );
    }
    for (activity, a, p, r) in &report.means {
        println!("{activity}\tmean\t-\t-\t{a:.3}\t{p:.3}\t{r:.3}");
    }
}
