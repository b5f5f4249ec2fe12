//! Command-line entry point wiring all modules together.
//!
//! Every subcommand is a thin adapter: parse flags, load files, call the
//! library, print lines. Data goes to stdout, diagnostics to stderr.
//! Exit codes: 0 success, 1 usage error, 2 data error.
//!
//! Configuration precedence is flags, then `ATHENA_*` environment
//! variables, then a config file, then built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::background::BackgroundRuleSet;
use crate::eval::{
    cross_validate, sensitivity_sweep_jobs, NoiseModel, SweepConfig, XvalOptions,
};
use crate::extract::{act_extract, extract_concurrent, Extraction, MatchProfile};
use crate::matching::{earliest_match, enumerate_matches, nonoverlapping_matches, sig_match};
use crate::model::{
    cluster_by_device, parse_log, parse_signature, serialize_log, serialize_signature,
    HomePrefix, NameTable, SignatureSet,
};
use crate::pcap::ingest;
use crate::siggen::{generate_signature, tolerance_vector, LabeledCapture, SigGenOptions};

pub const DEFAULT_R: f64 = 11.0;
pub const DEFAULT_EPS_FLOOR_US: i64 = crate::siggen::DEFAULT_EPS_FLOOR_US;
pub const DEFAULT_ALIGN_WINDOW_S: f64 = 5.0;

const ENV_PREFIX: &str = "ATHENA_";

#[derive(Parser, Debug)]
#[command(
    name = "athena",
    version,
    about = "Timed packet-sequence signatures for smart-home device activities",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    globals: GlobalFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalFlags {
    /// Config file (key = value lines); also ATHENA_CONFIG
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Tolerance multiplier; also ATHENA_R
    #[arg(long, global = true)]
    r: Option<f64>,

    /// Tolerance floor in microseconds; also ATHENA_EPS_FLOOR_US
    #[arg(long, global = true)]
    eps_floor_us: Option<i64>,

    /// Event alignment window in seconds; also ATHENA_ALIGN_WINDOW_S
    #[arg(long, global = true)]
    align_window_s: Option<f64>,

    /// Background rule file; also ATHENA_RULES
    #[arg(long, global = true)]
    rules: Option<PathBuf>,

    /// Server name table; also ATHENA_NAMES
    #[arg(long, global = true)]
    names: Option<PathBuf>,

    /// Worker threads for fan-out subcommands
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a pcap capture to the canonical log format
    Ingest {
        #[arg(long)]
        pcap: PathBuf,
        /// Home network CIDR, e.g. 192.168.1.0/24
        #[arg(long)]
        home_prefix: String,
    },
    /// Split a mixed log into per-device logs
    Cluster {
        #[arg(long)]
        log: PathBuf,
        /// Directory for per-device logs      (<device>.log)
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Partition a log into foreground and background
    Filter {
        #[arg(long)]
        log: PathBuf,
        /// Where to write the background partition
        #[arg(long)]
        background: Option<PathBuf>,
    },
    /// Learn a background rule set from a silent-period capture
    LearnBg {
        #[arg(long)]
        silent: PathBuf,
    },
    /// Generate an activity signature from repeated captures
    GenSig {
        /// Directory of capture logs named <activity>.<seq>.log
        #[arg(long)]
        captures: PathBuf,
        #[arg(long)]
        activity: String,
    },
    /// Match one signature against one log
    Match {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        sig: PathBuf,
        /// Enumerate up to N matches
        #[arg(long, conflicts_with_all = ["earliest", "nonoverlap"])]
        enumerate: Option<usize>,
        /// Print only the earliest match
        #[arg(long, conflicts_with = "nonoverlap")]
        earliest: bool,
        /// Print greedy non-overlapping matches
        #[arg(long)]
        nonoverlap: bool,
    },
    /// Extract the activity sequence of every device in a log
    Extract {
        #[arg(long)]
        log: PathBuf,
        /// Directory of signature files (*.sig)
        #[arg(long)]
        sigs: PathBuf,
        /// Use non-overlapping matching instead of sequential extraction
        #[arg(long)]
        concurrent: bool,
    },
    /// Evaluation harness
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Tolerance sensitivity sweep over synthetic traffic
    Sweep {
        #[arg(long)]
        sigs: PathBuf,
        #[arg(long, default_value_t = 1)]
        r_min: u32,
        #[arg(long, default_value_t = 30)]
        r_max: u32,
        #[arg(long)]
        trials: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        acts_per_trial: u32,
        #[arg(long, default_value_t = 3.0)]
        spacing_min_s: f64,
        #[arg(long, default_value_t = 60.0)]
        spacing_max_s: f64,
        #[arg(long, default_value_t = 0.0)]
        chatter_per_min: f64,
        #[arg(long, default_value_t = 0)]
        confusers: u32,
        #[arg(long, default_value_t = 15.0)]
        confuser_detune: f64,
        #[arg(long, default_value_t = 6.0)]
        confuser_offset_s: f64,
        /// Confuser clone length; omit to clone the full signature
        #[arg(long)]
        confuser_prefix: Option<usize>,
    },
    /// K-fold cross-validation over capture directories
    Xval {
        /// Directory of capture logs named <activity>.<seq>.log
        #[arg(long)]
        captures: PathBuf,
        #[arg(long)]
        folds: u32,
    },
}

/// Resolved configuration after applying precedence.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub r: f64,
    pub eps_floor_us: i64,
    pub align_window_s: f64,
    pub rules_path: Option<PathBuf>,
    pub names_path: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            r: DEFAULT_R,
            eps_floor_us: DEFAULT_EPS_FLOOR_US,
            align_window_s: DEFAULT_ALIGN_WINDOW_S,
            rules_path: None,
            names_path: None,
        }
    }
}

/// Environment lookup used by [`run`]; tests inject a fake.
pub type EnvLookup<'a> = &'a dyn Fn(&str) -> Option<String>;

fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", idx + 1))?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Apply precedence: flags, then ATHENA_* variables, then config file, then
/// defaults.
pub fn resolve_config(flags_like: &ConfigInputs, env: EnvLookup) -> Result<Config, String> {
    let file_path = flags_like
        .config
        .clone()
        .or_else(|| env(&format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from));
    let file_values = match &file_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };

    fn pick<T, F: Fn(&str) -> Result<T, String>>(
        flag: Option<T>,
        env_val: Option<String>,
        file_val: Option<&String>,
        parse: F,
        name: &str,
    ) -> Result<Option<T>, String> {
        if let Some(v) = flag {
            return Ok(Some(v));
        }
        if let Some(s) = env_val {
            return parse(&s).map(Some).map_err(|e| format!("{name}: {e}"));
        }
        if let Some(s) = file_val {
            return parse(s).map(Some).map_err(|e| format!("{name}: {e}"));
        }
        Ok(None)
    }

    let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
    let parse_i64 = |s: &str| s.parse::<i64>().map_err(|e| e.to_string());
    let parse_path = |s: &str| Ok(PathBuf::from(s));

    let r = pick(
        flags_like.r,
        env(&format!("{ENV_PREFIX}R")),
        file_values.get("r"),
        parse_f64,
        "r",
    )?
    .unwrap_or(DEFAULT_R);
    let eps_floor_us = pick(
        flags_like.eps_floor_us,
        env(&format!("{ENV_PREFIX}EPS_FLOOR_US")),
        file_values.get("eps_floor_us"),
        parse_i64,
        "eps_floor_us",
    )?
    .unwrap_or(DEFAULT_EPS_FLOOR_US);
    let align_window_s = pick(
        flags_like.align_window_s,
        env(&format!("{ENV_PREFIX}ALIGN_WINDOW_S")),
        file_values.get("align_window_s"),
        parse_f64,
        "align_window_s",
    )?
    .unwrap_or(DEFAULT_ALIGN_WINDOW_S);
    let rules_path = pick(
        flags_like.rules.clone(),
        env(&format!("{ENV_PREFIX}RULES")),
        file_values.get("rules"),
        parse_path,
        "rules",
    )?;
    let names_path = pick(
        flags_like.names.clone(),
        env(&format!("{ENV_PREFIX}NAMES")),
        file_values.get("names"),
        parse_path,
        "names",
    )?;

    if r < 1.0 {
        return Err(format!("r must be >= 1, got {r}"));
    }
    if eps_floor_us < 1 {
        return Err(format!("eps_floor_us must be >= 1, got {eps_floor_us}"));
    }
    if align_window_s <= 0.0 {
        return Err(format!("align_window_s must be > 0, got {align_window_s}"));
    }
    Ok(Config {
        r,
        eps_floor_us,
        align_window_s,
        rules_path,
        names_path,
    })
}

/// The configuration-bearing subset of the global flags.
#[derive(Debug, Clone, Default)]
pub struct ConfigInputs {
    pub config: Option<PathBuf>,
    pub r: Option<f64>,
    pub eps_floor_us: Option<i64>,
    pub align_window_s: Option<f64>,
    pub rules: Option<PathBuf>,
    pub names: Option<PathBuf>,
}

impl From<&GlobalFlags> for ConfigInputs {
    fn from(g: &GlobalFlags) -> Self {
        ConfigInputs {
            config: g.config.clone(),
            r: g.r,
            eps_floor_us: g.eps_floor_us,
            align_window_s: g.align_window_s,
            rules: g.rules.clone(),
            names: g.names.clone(),
        }
    }
}

struct DataError(String);

impl<E: std::error::Error> From<E> for DataError {
    fn from(e: E) -> Self {
        DataError(e.to_string())
    }
}

/// Run the command line. Returns the process exit code; data is written to
/// `out`, diagnostics to `err`.
pub fn run<I, S>(argv: I, env: EnvLookup, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    0
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    1
                }
            };
        }
    };
    let config = match resolve_config(&ConfigInputs::from(&cli.globals), env) {
        Ok(c) => c,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return 2;
        }
    };
    match dispatch(&cli, &config, out, err) {
        Ok(()) => 0,
        Err(DataError(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path)
        .map_err(|e| DataError(format!("cannot read {}: {e}", path.display())))
}

fn load_rules(config: &Config) -> Result<BackgroundRuleSet, DataError> {
    match &config.rules_path {
        Some(path) => Ok(BackgroundRuleSet::parse(&read_text(path)?)
            .map_err(|e| DataError(format!("{}: {e}", path.display())))?),
        None => Ok(BackgroundRuleSet::default_well_known()),
    }
}

fn load_names(config: &Config) -> Result<NameTable, DataError> {
    match &config.names_path {
        Some(path) => Ok(NameTable::parse(&read_text(path)?)
            .map_err(|e| DataError(format!("{}: {e}", path.display())))?),
        None => Ok(NameTable::empty()),
    }
}

// Capture files are named <activity>.<seq>.log; returns captures sorted by
// file name.
fn load_captures(dir: &Path, activity: Option<&str>) -> Result<Vec<LabeledCapture>, DataError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| DataError(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "log"))
        .collect();
    names.sort();
    let mut captures = Vec::new();
    for path in names {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let Some((act, _seq)) = stem.rsplit_once('.') else {
            continue;
        };
        if activity.is_some_and(|want| want != act) {
            continue;
        }
        let log = parse_log(&read_text(&path)?)
            .map_err(|e| DataError(format!("{}: {e}", path.display())))?;
        let device_label = log
            .packets()
            .first()
            .map(|p| p.base.device_addr.clone())
            .unwrap_or_else(|| "unknown".to_string());
        captures.push(LabeledCapture {
            activity_name: act.to_string(),
            device_label,
            foreground: log,
        });
    }
    Ok(captures)
}

fn load_signature_dir(dir: &Path) -> Result<Vec<crate::model::Signature>, DataError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| DataError(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "sig"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DataError(format!(
            "no .sig files in {}",
            dir.display()
        )));
    }
    let mut sigs = Vec::new();
    for path in paths {
        sigs.push(
            parse_signature(&read_text(&path)?)
                .map_err(|e| DataError(format!("{}: {e}", path.display())))?,
        );
    }
    Ok(sigs)
}

fn print_extraction(
    device: &str,
    extraction: &Extraction,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), DataError> {
    for event in &extraction.events {
        let indices = event
            .matched
            .to_one_based()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            out,
            "{} {} {} {}",
            event.end_t_us, device, event.activity_name, indices
        )?;
    }
    for anomaly in &extraction.anomalies {
        writeln!(
            err,
            "ANOMALY {} {} {}",
            device,
            anomaly.packet_index + 1,
            anomaly.signatures.join(",")
        )?;
    }
    Ok(())
}

fn dispatch(
    cli: &Cli,
    config: &Config,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), DataError> {
    match &cli.command {
        Command::Ingest { pcap, home_prefix } => {
            let bytes =
                fs::read(pcap).map_err(|e| DataError(format!("cannot read {}: {e}", pcap.display())))?;
            let home = HomePrefix::parse(home_prefix)
                .ok_or_else(|| DataError(format!("bad home prefix {home_prefix}")))?;
            let names = load_names(config)?;
            let ingested = ingest(&bytes, &home, &names)?;
            for warning in &ingested.warnings {
                writeln!(err, "warning: {warning:?}")?;
            }
            write!(out, "{}", serialize_log(&ingested.log))?;
        }
        Command::Cluster { log, out_dir } => {
            let parsed = parse_log(&read_text(log)?)?;
            fs::create_dir_all(out_dir)
                .map_err(|e| DataError(format!("cannot create {}: {e}", out_dir.display())))?;
            for (device, sublog) in cluster_by_device(&parsed) {
                let path = out_dir.join(format!("{device}.log"));
                fs::write(&path, serialize_log(&sublog))
                    .map_err(|e| DataError(format!("cannot write {}: {e}", path.display())))?;
                writeln!(out, "{} {} {}", device, sublog.len(), path.display())?;
            }
        }
        Command::Filter { log, background } => {
            let parsed = parse_log(&read_text(log)?)?;
            let rules = load_rules(config)?;
            let (fg, bg) = crate::background::filter_background(&parsed, &rules);
            write!(out, "{}", serialize_log(&fg))?;
            if let Some(path) = background {
                fs::write(path, serialize_log(&bg))
                    .map_err(|e| DataError(format!("cannot write {}: {e}", path.display())))?;
            }
            writeln!(err, "foreground {} background {}", fg.len(), bg.len())?;
        }
        Command::LearnBg { silent } => {
            let parsed = parse_log(&read_text(silent)?)?;
            if parsed.is_empty() {
                writeln!(err, "warning: silent log is empty, emitting default rules only")?;
            }
            let rules = crate::background::learn_silent_profile(&parsed);
            write!(out, "{}", rules.serialize())?;
        }
        Command::GenSig { captures, activity } => {
            let caps = load_captures(captures, Some(activity))?;
            let sig = generate_signature(&caps, &SigGenOptions::default())?;
            let tol = tolerance_vector(&sig, config.r, config.eps_floor_us);
            writeln!(
                err,
                "captures {} tolerance r={} eps_us={:?}",
                caps.len(),
                config.r,
                tol.epsilons_us()
            )?;
            write!(out, "{}", serialize_signature(&sig))?;
        }
        Command::Match {
            log,
            sig,
            enumerate,
            earliest,
            nonoverlap,
        } => {
            let parsed_log = parse_log(&read_text(log)?)?;
            let parsed_sig = parse_signature(&read_text(sig)?)?;
            let tol = tolerance_vector(&parsed_sig, config.r, config.eps_floor_us);
            let emit = |m: &crate::matching::Match, out: &mut dyn Write| -> Result<(), DataError> {
                let line = m
                    .to_one_based()
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(",");
                writeln!(out, "{line}")?;
                Ok(())
            };
            if *nonoverlap {
                for m in nonoverlapping_matches(&parsed_log, &parsed_sig, &tol)? {
                    emit(&m, out)?;
                }
            } else if *earliest {
                let dag = sig_match(&parsed_log, &parsed_sig, &tol)?;
                if let Some(m) = earliest_match(&dag) {
                    emit(&m, out)?;
                }
            } else {
                let limit = enumerate.unwrap_or(1000);
                let dag = sig_match(&parsed_log, &parsed_sig, &tol)?;
                let found = enumerate_matches(&dag, limit);
                for m in &found.matches {
                    emit(m, out)?;
                }
                if found.truncated {
                    writeln!(err, "warning: truncated at {limit} matches")?;
                }
            }
        }
        Command::Extract {
            log,
            sigs,
            concurrent,
        } => {
            let parsed_log = parse_log(&read_text(log)?)?;
            let signatures = load_signature_dir(sigs)?;
            // group signatures by the device address their packets carry
            let mut by_device: BTreeMap<String, Vec<crate::model::Signature>> = BTreeMap::new();
            for sig in signatures {
                let device = sig.packets()[0].base.device_addr.clone();
                by_device.entry(device).or_default().push(sig);
            }
            let mut profiles = BTreeMap::new();
            for (device, device_sigs) in by_device {
                let set = SignatureSet::new(device_sigs)?;
                profiles.insert(
                    device,
                    MatchProfile::new(set, config.r, config.eps_floor_us),
                );
            }
            let mut lines = Vec::new();
            for (device, sublog) in cluster_by_device(&parsed_log) {
                match profiles.get(&device) {
                    Some(profile) => {
                        let extraction = if *concurrent {
                            extract_concurrent(&sublog, &profile.signatures, &profile.tolerances)?
                        } else {
                            act_extract(&sublog, &profile.signatures, &profile.tolerances)?
                        };
                        let mut buf_out = Vec::new();
                        let mut buf_err = Vec::new();
                        print_extraction(&device, &extraction, &mut buf_out, &mut buf_err)?;
                        lines.push((device.clone(), buf_out, buf_err));
                    }
                    None => {
                        writeln!(err, "warning: no signatures for device {device}")?;
                    }
                }
            }
            // chronological merge across devices by line-leading end time
            let mut event_lines: Vec<(i64, String)> = Vec::new();
            for (_, buf_out, buf_err) in &lines {
                for line in String::from_utf8_lossy(buf_out).lines() {
                    let end: i64 = line
                        .split_whitespace()
                        .next()
                        .and_then(|t| t.parse().ok())
                        .unwrap_or(i64::MAX);
                    event_lines.push((end, line.to_string()));
                }
                err.write_all(buf_err)?;
            }
            event_lines.sort();
            for (_, line) in event_lines {
                writeln!(out, "{line}")?;
            }
        }
        Command::Eval { what } => match what {
            EvalCommand::Sweep {
                sigs,
                r_min,
                r_max,
                trials,
                seed,
                acts_per_trial,
                spacing_min_s,
                spacing_max_s,
                chatter_per_min,
                confusers,
                confuser_detune,
                confuser_offset_s,
                confuser_prefix,
            } => {
                let signatures = load_signature_dir(sigs)?;
                let set = SignatureSet::new(signatures)?;
                let r_values: Vec<f64> = (*r_min..=*r_max).map(f64::from).collect();
                let cfg = SweepConfig {
                    trials: *trials,
                    seed: *seed,
                    activities_per_trial: *acts_per_trial,
                    spacing_us: (
                        (spacing_min_s * 1e6) as i64,
                        (spacing_max_s * 1e6) as i64,
                    ),
                    noise: NoiseModel {
                        chatter_per_minute: *chatter_per_min,
                        confusers_per_log: *confusers,
                        confuser_activity: None,
                        confuser_prefix_len: *confuser_prefix,
                        confuser_detune_sigmas: *confuser_detune,
                        confuser_offset_us: (confuser_offset_s * 1e6) as i64,
                    },
                    eps_floor_us: config.eps_floor_us,
                    align_window_us: (config.align_window_s * 1e6) as i64,
                    rules: load_rules(config)?,
                };
                let rows = sensitivity_sweep_jobs(&set, &r_values, &cfg, cli.globals.jobs)?;
                for row in rows {
                    writeln!(out, "{}\t{}\t{:.4}", row.activity, row.r, row.accuracy())?;
                }
            }
            EvalCommand::Xval { captures, folds } => {
                let caps = load_captures(captures, None)?;
                let opts = XvalOptions {
                    eps_floor_us: config.eps_floor_us,
                    align_window_us: (config.align_window_s * 1e6) as i64,
                    siggen: SigGenOptions::default(),
                };
                let report = cross_validate(&caps, *folds, config.r, &opts)?;
                for row in &report.rows {
                    writeln!(
                        out,
                        "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                        row.activity,
                        row.fold,
                        row.report.accuracy(),
                        row.report.precision(),
                        row.report.recall()
                    )?;
                }
                for (activity, a, p, r) in &report.means {
                    writeln!(out, "{activity}\tmean\t{a:.4}\t{p:.4}\t{r:.4}")?;
                }
            }
        },
    }
    Ok(())
}
