//! Background-traffic classification and filtering.
//!
//! Device traffic that is not triggered by a human or the environment falls
//! into three buckets: management/service chatter (NTP, DNS, SSH),
//! signal/update traffic (keep-alives, firmware update checks), and random
//! noise (mDNS and similar discovery protocols). Rules match on header
//! fields only; first match wins and unmatched packets stay foreground.

use std::fmt;

use thiserror::Error;

use crate::model::{BasePacket, Direction, Protocol, TimedPacket, TrafficLog};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("line {0}: malformed rule")]
    MalformedRule(usize),
}

/// Category assigned to a packet by the rule set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrafficCategory {
    ManagementService,
    SignalUpdate,
    RandomNoise,
    Foreground,
}

impl fmt::Display for TrafficCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrafficCategory::ManagementService => "management-service",
            TrafficCategory::SignalUpdate => "signal-update",
            TrafficCategory::RandomNoise => "random-noise",
            TrafficCategory::Foreground => "foreground",
        };
        write!(f, "{s}")
    }
}

impl TrafficCategory {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "management-service" => Some(TrafficCategory::ManagementService),
            "signal-update" => Some(TrafficCategory::SignalUpdate),
            "random-noise" => Some(TrafficCategory::RandomNoise),
            "foreground" => Some(TrafficCategory::Foreground),
            _ => None,
        }
    }
}

/// One predicate over (server name glob, port, protocol, direction).
/// `None` fields are wildcards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackgroundRule {
    pub category: TrafficCategory,
    pub name_glob: String,
    pub port: Option<u16>,
    pub protocol: Option<Protocol>,
    pub direction: Option<Direction>,
}

impl BackgroundRule {
    pub fn matches(&self, p: &BasePacket) -> bool {
        glob_match(&self.name_glob, &p.server_name)
            && self.port.is_none_or(|port| port == p.server_port)
            && self.protocol.is_none_or(|proto| proto == p.protocol)
            && self.direction.is_none_or(|dir| dir == p.direction)
    }
}

/// Ordered first-match-wins rule list; no match means foreground.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackgroundRuleSet {
    rules: Vec<BackgroundRule>,
}

impl BackgroundRuleSet {
    pub fn empty() -> Self {
        BackgroundRuleSet::default()
    }

    pub fn new(rules: Vec<BackgroundRule>) -> Self {
        BackgroundRuleSet { rules }
    }

    pub fn rules(&self) -> &[BackgroundRule] {
        &self.rules
    }

    /// The well-known application ports IoT devices chatter on, with the
    /// categories their protocols belong to: 22/TCP, 53/UDP, 123/UDP under
    /// management and service, 80/TCP under signal and update, 5353/UDP
    /// under random noise.
    pub fn default_well_known() -> Self {
        let mk = |category, port, protocol| BackgroundRule {
            category,
            name_glob: "*".to_string(),
            port: Some(port),
            protocol: Some(protocol),
            direction: None,
        };
        BackgroundRuleSet::new(vec![
            mk(TrafficCategory::ManagementService, 22, Protocol::Tcp),
            mk(TrafficCategory::ManagementService, 53, Protocol::Udp),
            mk(TrafficCategory::ManagementService, 123, Protocol::Udp),
            mk(TrafficCategory::SignalUpdate, 80, Protocol::Tcp),
            mk(TrafficCategory::RandomNoise, 5353, Protocol::Udp),
        ])
    }

    /// Parse one rule per line:
    /// `<category> <name_glob> <port|*> <TCP|UDP|*> <D2S|S2D|*>`.
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut rules = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(RuleError::MalformedRule(line_no));
            }
            let category =
                TrafficCategory::parse(fields[0]).ok_or(RuleError::MalformedRule(line_no))?;
            let port = match fields[2] {
                "*" => None,
                p => Some(p.parse::<u16>().map_err(|_| RuleError::MalformedRule(line_no))?),
            };
            let protocol = match fields[3] {
                "*" => None,
                "TCP" => Some(Protocol::Tcp),
                "UDP" => Some(Protocol::Udp),
                _ => return Err(RuleError::MalformedRule(line_no)),
            };
            let direction = match fields[4] {
                "*" => None,
                "D2S" => Some(Direction::DeviceToServer),
                "S2D" => Some(Direction::ServerToDevice),
                _ => return Err(RuleError::MalformedRule(line_no)),
            };
            rules.push(BackgroundRule {
                category,
                name_glob: fields[1].to_string(),
                port,
                protocol,
                direction,
            });
        }
        Ok(BackgroundRuleSet::new(rules))
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            let port = r.port.map_or("*".to_string(), |p| p.to_string());
            let proto = r.protocol.map_or("*".to_string(), |p| p.to_string());
            let dir = r.direction.map_or("*".to_string(), |d| d.to_string());
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                r.category, r.name_glob, port, proto, dir
            ));
        }
        out
    }
}

/// Match `pattern` against `text` where `*` matches any run of characters.
fn glob_match(pattern: &str, text: &str) -> bool {
    let pat: Vec<char> = pattern.chars().collect();
    let txt: Vec<char> = text.chars().collect();
    // classic two-pointer wildcard match with backtracking on the last star
    let (mut p, mut t) = (0usize, 0usize);
    let (mut star, mut star_t) = (None::<usize>, 0usize);
    while t < txt.len() {
        if p < pat.len() && (pat[p] == txt[t]) {
            p += 1;
            t += 1;
        } else if p < pat.len() && pat[p] == '*' {
            star = Some(p);
            star_t = t;
            p += 1;
        } else if let Some(sp) = star {
            p = sp + 1;
            star_t += 1;
            t = star_t;
        } else {
            return false;
        }
    }
    while p < pat.len() && pat[p] == '*' {
        p += 1;
    }
    p == pat.len()
}

/// Classify one packet, first matching rule wins; no match is foreground.
pub fn classify(p: &BasePacket, rules: &BackgroundRuleSet) -> TrafficCategory {
    rules
        .rules()
        .iter()
        .find(|r| r.matches(p))
        .map(|r| r.category)
        .unwrap_or(TrafficCategory::Foreground)
}

/// Partition a log into (foreground, background), both order-preserving.
pub fn filter_background(log: &TrafficLog, rules: &BackgroundRuleSet) -> (TrafficLog, TrafficLog) {
    let mut fg: Vec<TimedPacket> = Vec::new();
    let mut bg: Vec<TimedPacket> = Vec::new();
    for p in log.packets() {
        if classify(&p.base, rules) == TrafficCategory::Foreground {
            fg.push(p.clone());
        } else {
            bg.push(p.clone());
        }
    }
    let rebuild = |packets: Vec<TimedPacket>| {
        let sub = TrafficLog::new(packets).expect("subsequence of a monotonic log is monotonic");
        match log.device_addr() {
            Some(addr) => sub.with_device(addr).expect("device tag carried over"),
            None => sub,
        }
    };
    (rebuild(fg), rebuild(bg))
}

/// Learn a device's background profile from a capture taken while nothing
/// was triggered: one rule per distinct (server, port, protocol, direction)
/// tuple seen, categorized by the well-known-port table or defaulting to
/// signal/update, followed by the default well-known rules.
pub fn learn_silent_profile(silent_log: &TrafficLog) -> BackgroundRuleSet {
    let defaults = BackgroundRuleSet::default_well_known();
    let mut seen: Vec<(String, u16, Protocol, Direction)> = Vec::new();
    let mut rules = Vec::new();
    for p in silent_log.packets() {
        let key = (
            p.base.server_name.clone(),
            p.base.server_port,
            p.base.protocol,
            p.base.direction,
        );
        if seen.contains(&key) {
            continue;
        }
        let category = defaults
            .rules()
            .iter()
            .find(|r| r.matches(&p.base))
            .map(|r| r.category)
            .unwrap_or(TrafficCategory::SignalUpdate);
        rules.push(BackgroundRule {
            category,
            name_glob: key.0.clone(),
            port: Some(key.1),
            protocol: Some(key.2),
            direction: Some(key.3),
        });
        seen.push(key);
    }
    rules.extend(defaults.rules().iter().cloned());
    BackgroundRuleSet::new(rules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimedPacket;

    fn packet(server: &str, port: u16, protocol: Protocol, t_us: i64) -> TimedPacket {
        TimedPacket::new(
            BasePacket {
                device_addr: "dev".into(),
                server_name: server.into(),
                server_port: port,
                protocol,
                direction: Direction::DeviceToServer,
                length: 90,
                payload_digest: None,
            },
            t_us,
        )
    }

    #[test]
    fn ntp_is_management_service() {
        let p = packet("time.nist.gov", 123, Protocol::Udp, 0);
        assert_eq!(
            classify(&p.base, &BackgroundRuleSet::default_well_known()),
            TrafficCategory::ManagementService
        );
    }

    #[test]
    fn mdns_is_random_noise() {
        let p = packet("224.0.0.251", 5353, Protocol::Udp, 0);
        assert_eq!(
            classify(&p.base, &BackgroundRuleSet::default_well_known()),
            TrafficCategory::RandomNoise
        );
    }

    #[test]
    fn unmatched_tls_is_foreground() {
        let p = packet("rbs.august.com", 443, Protocol::Tcp, 0);
        assert_eq!(
            classify(&p.base, &BackgroundRuleSet::default_well_known()),
            TrafficCategory::Foreground
        );
    }

    #[test]
    fn all_ntp_log_filters_to_empty_foreground() {
        let log = TrafficLog::new(vec![
            packet("a.ntp.org", 123, Protocol::Udp, 1),
            packet("b.ntp.org", 123, Protocol::Udp, 2),
        ])
        .unwrap();
        let (fg, bg) = filter_background(&log, &BackgroundRuleSet::default_well_known());
        assert!(fg.is_empty());
        assert_eq!(bg.len(), 2);
    }

    #[test]
    fn empty_rule_set_keeps_everything_foreground() {
        let log = TrafficLog::new(vec![packet("x", 123, Protocol::Udp, 1)]).unwrap();
        let (fg, bg) = filter_background(&log, &BackgroundRuleSet::empty());
        assert_eq!(fg, log);
        assert!(bg.is_empty());
    }

    #[test]
    fn mixed_log_partitions_correctly() {
        let log = TrafficLog::new(vec![
            packet("ntp.org", 123, Protocol::Udp, 1),
            packet("cloud.example", 443, Protocol::Tcp, 2),
            packet("ntp.org", 123, Protocol::Udp, 3),
            packet("cloud.example", 443, Protocol::Tcp, 4),
            packet("ntp.org", 123, Protocol::Udp, 5),
        ])
        .unwrap();
        let (fg, bg) = filter_background(&log, &BackgroundRuleSet::default_well_known());
        assert_eq!(fg.len(), 2);
        assert_eq!(bg.len(), 3);
        // true partition: order kept, nothing duplicated or dropped
        let mut merged: Vec<i64> = fg
            .packets()
            .iter()
            .chain(bg.packets())
            .map(|p| p.t_us)
            .collect();
        merged.sort_unstable();
        assert_eq!(merged, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn filtering_twice_equals_filtering_once() {
        let log = TrafficLog::new(vec![
            packet("ntp.org", 123, Protocol::Udp, 1),
            packet("cloud.example", 443, Protocol::Tcp, 2),
        ])
        .unwrap();
        let rules = BackgroundRuleSet::default_well_known();
        let (fg1, _) = filter_background(&log, &rules);
        let (fg2, bg2) = filter_background(&fg1, &rules);
        assert_eq!(fg1, fg2);
        assert!(bg2.is_empty());
    }

    #[test]
    fn silent_keepalives_learned_as_signal_update() {
        let log = TrafficLog::new(vec![
            packet("mqtt.example.com", 8883, Protocol::Tcp, 1_000_000),
            packet("mqtt.example.com", 8883, Protocol::Tcp, 31_000_000),
            packet("mqtt.example.com", 8883, Protocol::Tcp, 61_000_000),
        ])
        .unwrap();
        let rules = learn_silent_profile(&log);
        let learned = &rules.rules()[0];
        assert_eq!(learned.category, TrafficCategory::SignalUpdate);
        assert_eq!(learned.name_glob, "mqtt.example.com");
        assert_eq!(learned.port, Some(8883));
        // learned rule deduplicated across the three keep-alives
        assert_eq!(
            rules.rules().len(),
            1 + BackgroundRuleSet::default_well_known().rules().len()
        );
    }

    #[test]
    fn empty_silent_log_yields_defaults_only() {
        let rules = learn_silent_profile(&TrafficLog::empty());
        assert_eq!(rules, BackgroundRuleSet::default_well_known());
    }

    #[test]
    fn port80_update_checks_learned_as_signal_update() {
        let log =
            TrafficLog::new(vec![packet("fw.vendor.example", 80, Protocol::Tcp, 5)]).unwrap();
        let rules = learn_silent_profile(&log);
        assert_eq!(rules.rules()[0].category, TrafficCategory::SignalUpdate);
    }

    #[test]
    fn rule_file_round_trip() {
        let text = "management-service *.ntp.org 123 UDP *\nsignal-update * 80 TCP D2S\nrandom-noise 224.0.0.* * UDP *\n";
        let rules = BackgroundRuleSet::parse(text).unwrap();
        assert_eq!(rules.serialize(), text);
        assert!(BackgroundRuleSet::parse("nonsense only\n").is_err());
    }

    #[test]
    fn glob_semantics() {
        assert!(glob_match("*", "anything"));
        assert!(glob_match("*.august.com", "rbs.august.com"));
        assert!(!glob_match("*.august.com", "august.com"));
        assert!(glob_match("a*b*c", "a-x-b-y-c"));
        assert!(!glob_match("a*b*c", "a-x-b-y"));
        assert!(glob_match("exact", "exact"));
        assert!(!glob_match("exact", "exactly"));
    }

    #[test]
    fn foreground_pin_rule_overrides_later_background_rule() {
        let text = "foreground pinned.example 123 UDP *\nmanagement-service * 123 UDP *\n";
        let rules = BackgroundRuleSet::parse(text).unwrap();
        let pinned = packet("pinned.example", 123, Protocol::Udp, 0);
        let other = packet("other.example", 123, Protocol::Udp, 0);
        assert_eq!(classify(&pinned.base, &rules), TrafficCategory::Foreground);
        assert_eq!(
            classify(&other.base, &rules),
            TrafficCategory::ManagementService
        );
    }
}
