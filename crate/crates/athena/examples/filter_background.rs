//! Learn a device's background profile from a silent-period capture, then
//! use it to split a busy log into foreground and background.
//!
//! Run with: `cargo run --example filter_background`

use athena::background::{classify, filter_background, learn_silent_profile};
use athena::model::{parse_log, serialize_log};

const SILENT_WEEK: &str = "\
1000000 lock mqtt.august.com 8883 TCP D2S 120
31000000 lock mqtt.august.com 8883 TCP D2S 120
45000000 lock time.nist.gov 123 UDP D2S 76
61000000 lock mqtt.august.com 8883 TCP D2S 120
82000000 lock fw.august.com 80 TCP D2S 310
";

const BUSY_HOUR: &str = "\
1000000 lock time.nist.gov 123 UDP D2S 76
5000000 lock rbs.august.com 443 TCP S2D 413
5008000 lock rbs.august.com 443 TCP D2S 605
6000000 lock mqtt.august.com 8883 TCP D2S 120
7500000 lock rbs.august.com 443 TCP S2D 413
7508000 lock rbs.august.com 443 TCP D2S 605
";

fn main() {
    let silent = parse_log(SILENT_WEEK).expect("silent log parses");
    let rules = learn_silent_profile(&silent);
    println!("learned rule set:");
    print!("{}", rules.serialize());

    let busy = parse_log(BUSY_HOUR).expect("busy log parses");
    for p in busy.packets() {
        println!(
            "{:>9}us {:<18} -> {}",
            p.t_us,
            format!("{}:{}", p.base.server_name, p.base.server_port),
            classify(&p.base, &rules)
        );
    }

    let (foreground, background) = filter_background(&busy, &rules);
    println!(
        "\nforeground ({} packets):\n{}",
        foreground.len(),
        serialize_log(&foreground)
    );
    println!("background packets: {}", background.len());
}
