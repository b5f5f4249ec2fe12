//! Evaluation harness: synthetic ground-truth traffic, extraction scoring,
//! tolerance sensitivity sweeps, and k-fold cross-validation.
//!
//! Synthesis stands in for a physical testbed: scheduled activities emit
//! their signature's base packets with per-gap noise drawn from the
//! signature's own interval statistics (truncated at four standard
//! deviations), optionally interleaved with well-known-port chatter and
//! with "confuser" packets that clone a signature's base sequence with one
//! detuned gap. Everything is keyed off an explicit seed; identical inputs
//! produce byte-identical logs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::background::{filter_background, BackgroundRuleSet};
use crate::extract::{act_extract, tolerance_map, ActivityEvent, ExtractError};
use crate::model::{BasePacket, Direction, Protocol, SignatureSet, TimedPacket, TrafficLog};
use crate::siggen::{generate_signature, LabeledCapture, SigGenError, SigGenOptions};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("schedule is not sequential on device {device}: activity starting at {second_trigger_us}us overlaps the previous one")]
    ScheduleOverlap {
        device: String,
        second_trigger_us: i64,
    },
    #[error("schedule names unknown activity {0}")]
    UnknownActivity(String),
    #[error("too few captures for {activity}: have {have}, need at least {need}")]
    TooFewCaptures {
        activity: String,
        have: usize,
        need: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    SigGen(#[from] SigGenError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

/// One scheduled ground-truth occurrence and where its packets landed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthEvent {
    pub activity_name: String,
    pub trigger_t_us: i64,
    /// Indices of this event's packets in the synthesized log.
    pub packet_indices: Vec<usize>,
}

impl GroundTruthEvent {
    pub fn end_t_us(&self, log: &TrafficLog) -> i64 {
        self.packet_indices
            .iter()
            .map(|&i| log.packets()[i].t_us)
            .max()
            .expect("ground-truth event has packets")
    }
}

/// A synthesized log together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthLog {
    pub log: TrafficLog,
    pub events: Vec<GroundTruthEvent>,
}

/// Background noise injected into synthesized logs.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Well-known-port chatter packets per minute of simulated time.
    pub chatter_per_minute: f64,
    /// How many confuser clones to place (capped at the schedule length).
    pub confusers_per_log: u32,
    /// Signature the confusers clone; defaults to the set's first activity.
    pub confuser_activity: Option<String>,
    /// How many leading packets of the signature the confuser clones;
    /// `None` clones the whole sequence.
    pub confuser_prefix_len: Option<usize>,
    /// Offset applied to the confuser's first gap, in units of that gap's
    /// standard deviation. A clone detuned by `d` sigmas matches only once
    /// the tolerance multiplier reaches `d`.
    pub confuser_detune_sigmas: f64,
    /// Where each confuser starts, relative to a scheduled trigger.
    pub confuser_offset_us: i64,
}

impl NoiseModel {
    pub fn silent() -> Self {
        NoiseModel {
            chatter_per_minute: 0.0,
            confusers_per_log: 0,
            confuser_activity: None,
            confuser_prefix_len: None,
            confuser_detune_sigmas: 0.0,
            confuser_offset_us: 0,
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::silent()
    }
}

/// A list of (activity name, trigger time in microseconds).
pub type Schedule = Vec<(String, i64)>;

fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master
        ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// One gap draw: Normal(mean, stdev) truncated at +/-4 sigma, floored at 1us.
fn sample_gap_us(rng: &mut ChaCha8Rng, mean_us: f64, stdev_us: f64) -> i64 {
    if stdev_us <= 0.0 {
        return (mean_us.round() as i64).max(1);
    }
    let normal = Normal::new(mean_us, stdev_us).expect("stdev checked positive");
    let bound = 4.0 * stdev_us;
    loop {
        let x = normal.sample(rng);
        if (x - mean_us).abs() <= bound {
            return (x.round() as i64).max(1);
        }
    }
}

fn chatter_base(device: &str, which: usize) -> BasePacket {
    let (server, port, protocol, length) = match which % 3 {
        0 => ("time.nist.gov", 123u16, Protocol::Udp, 76u32),
        1 => ("dns.resolver.example", 53, Protocol::Udp, 89),
        _ => ("224.0.0.251", 5353, Protocol::Udp, 120),
    };
    BasePacket {
        device_addr: device.to_string(),
        server_name: server.to_string(),
        server_port: port,
        protocol,
        direction: Direction::DeviceToServer,
        length,
        payload_digest: None,
    }
}

struct PendingPacket {
    t_us: i64,
    base: BasePacket,
    event: Option<usize>,
}

fn synthesize_impl(
    sigs: &SignatureSet,
    schedule: &[(String, i64)],
    noise: &NoiseModel,
    seed: u64,
    enforce_sequential: bool,
) -> Result<GroundTruthLog, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x61637469, 0));
    let mut pending: Vec<PendingPacket> = Vec::new();
    let mut event_names: Vec<(String, i64)> = Vec::new();

    // scheduled activities
    for (event_idx, (name, trigger)) in schedule.iter().enumerate() {
        let sig = sigs
            .get(name)
            .ok_or_else(|| EvalError::UnknownActivity(name.clone()))?;
        let mut t = *trigger;
        for (j, packet) in sig.packets().iter().enumerate() {
            if j > 0 {
                let stat = &sig.interval_stats()[j - 1];
                t += sample_gap_us(&mut rng, stat.mean_us, stat.stdev_us);
            }
            pending.push(PendingPacket {
                t_us: t,
                base: packet.base.clone(),
                event: Some(event_idx),
            });
        }
        event_names.push((name.clone(), *trigger));
    }

    // confuser clones: the target signature's leading base packets with the
    // first gap pushed off by a fixed number of sigmas, exact gaps after
    if noise.confusers_per_log > 0 && !schedule.is_empty() {
        let target_name = noise
            .confuser_activity
            .clone()
            .unwrap_or_else(|| sigs.signatures()[0].activity_name.clone());
        let target = sigs
            .get(&target_name)
            .ok_or_else(|| EvalError::UnknownActivity(target_name.clone()))?;
        let prefix_len = noise
            .confuser_prefix_len
            .unwrap_or(target.len())
            .clamp(1, target.len());
        for k in 0..noise.confusers_per_log.min(schedule.len() as u32) {
            let trigger = schedule[k as usize].1 + noise.confuser_offset_us;
            let mut t = trigger;
            for (j, packet) in target.packets().iter().take(prefix_len).enumerate() {
                if j > 0 {
                    let stat = &target.interval_stats()[j - 1];
                    let mut gap = stat.mean_us;
                    if j == 1 {
                        gap += noise.confuser_detune_sigmas * stat.stdev_us;
                    }
                    t += (gap.round() as i64).max(1);
                }
                pending.push(PendingPacket {
                    t_us: t,
                    base: packet.base.clone(),
                    event: None,
                });
            }
        }
    }

    // well-known-port chatter spread over the simulated span
    if noise.chatter_per_minute > 0.0 && !pending.is_empty() {
        let span_start = pending.iter().map(|p| p.t_us).min().unwrap() - 1_000_000;
        let span_end = pending.iter().map(|p| p.t_us).max().unwrap() + 1_000_000;
        let minutes = (span_end - span_start) as f64 / 60e6;
        let count = (noise.chatter_per_minute * minutes).floor() as usize;
        let devices: Vec<String> = {
            let mut seen = Vec::new();
            for p in &pending {
                if !seen.contains(&p.base.device_addr) {
                    seen.push(p.base.device_addr.clone());
                }
            }
            seen
        };
        for c in 0..count {
            let device = &devices[c % devices.len()];
            pending.push(PendingPacket {
                t_us: rng.random_range(span_start..=span_end),
                base: chatter_base(device, c),
                event: None,
            });
        }
    }

    // merge, keeping a stable order for identical stamps, then nudge
    // collisions forward so the log invariant holds
    pending.sort_by_key(|p| p.t_us);
    let mut prev: Option<i64> = None;
    for p in &mut pending {
        if let Some(pt) = prev {
            if p.t_us <= pt {
                p.t_us = pt + 1;
            }
        }
        prev = Some(p.t_us);
    }

    let mut events: Vec<GroundTruthEvent> = event_names
        .into_iter()
        .map(|(activity_name, trigger_t_us)| GroundTruthEvent {
            activity_name,
            trigger_t_us,
            packet_indices: Vec::new(),
        })
        .collect();
    let mut packets = Vec::with_capacity(pending.len());
    for (idx, p) in pending.iter().enumerate() {
        if let Some(e) = p.event {
            events[e].packet_indices.push(idx);
        }
        packets.push(TimedPacket::new(p.base.clone(), p.t_us));
    }
    let log = TrafficLog::new(packets).expect("collisions nudged above");

    if enforce_sequential {
        // per device, every packet of an earlier event must precede every
        // packet of a later one
        let mut last_end: BTreeMap<&str, (i64, usize)> = BTreeMap::new();
        for (e_idx, event) in events.iter().enumerate() {
            let device = &log.packets()[event.packet_indices[0]].base.device_addr;
            let start = event
                .packet_indices
                .iter()
                .map(|&i| log.packets()[i].t_us)
                .min()
                .unwrap();
            let end = event.end_t_us(&log);
            if let Some(&(prev_end, _)) = last_end.get(device.as_str()) {
                if start <= prev_end {
                    return Err(EvalError::ScheduleOverlap {
                        device: device.clone(),
                        second_trigger_us: events[e_idx].trigger_t_us,
                    });
                }
            }
            last_end.insert(device.as_str(), (end, e_idx));
        }
    }

    Ok(GroundTruthLog { log, events })
}

/// Synthesize a ground-truth log from a schedule. Activities must be
/// strictly sequential per device; overlap is an error.
pub fn synthesize(
    sigs: &SignatureSet,
    schedule: &[(String, i64)],
    noise: &NoiseModel,
    seed: u64,
) -> Result<GroundTruthLog, EvalError> {
    synthesize_impl(sigs, schedule, noise, seed, true)
}

/// Synthesis variant that permits overlapping (concurrent) activities.
pub fn synthesize_concurrent(
    sigs: &SignatureSet,
    schedule: &[(String, i64)],
    noise: &NoiseModel,
    seed: u64,
) -> Result<GroundTruthLog, EvalError> {
    synthesize_impl(sigs, schedule, noise, seed, false)
}

/// Draw a random sequential schedule: activities uniform over the set,
/// consecutive triggers separated by the previous signature's span plus a
/// uniform spacing draw.
pub fn random_schedule(
    sigs: &SignatureSet,
    count: u32,
    spacing_us: (i64, i64),
    rng: &mut ChaCha8Rng,
) -> Schedule {
    let mut schedule = Vec::with_capacity(count as usize);
    let mut t = 1_000_000i64;
    for _ in 0..count {
        let sig = &sigs.signatures()[rng.random_range(0..sigs.len())];
        schedule.push((sig.activity_name.clone(), t));
        let span = sig.packets().last().expect("n >= 1").t_us;
        t += span + rng.random_range(spacing_us.0..=spacing_us.1);
    }
    schedule
}

/// Extraction quality against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreReport {
    pub true_pos: u32,
    pub false_pos: u32,
    pub false_neg: u32,
}

impl ScoreReport {
    /// tp / (tp + fp); 1.0 when nothing was extracted.
    pub fn precision(&self) -> f64 {
        let denom = self.true_pos + self.false_pos;
        if denom == 0 {
            1.0
        } else {
            f64::from(self.true_pos) / f64::from(denom)
        }
    }

    /// tp / (tp + fn); 1.0 when there was no truth to find.
    pub fn recall(&self) -> f64 {
        let denom = self.true_pos + self.false_neg;
        if denom == 0 {
            1.0
        } else {
            f64::from(self.true_pos) / f64::from(denom)
        }
    }

    /// tp / (tp + fp + fn); 1.0 when all three are zero.
    pub fn accuracy(&self) -> f64 {
        let denom = self.true_pos + self.false_pos + self.false_neg;
        if denom == 0 {
            1.0
        } else {
            f64::from(self.true_pos) / f64::from(denom)
        }
    }

    pub fn add(&mut self, other: &ScoreReport) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
    }
}

/// Greedy one-to-one alignment of extracted events to truth events: same
/// activity name, end times within the window. Aligned pairs are true
/// positives; leftover extracted events are false positives; leftover truth
/// events are false negatives.
pub fn score(
    extracted: &[ActivityEvent],
    truth: &GroundTruthLog,
    align_window_us: i64,
) -> ScoreReport {
    let mut truth_events: Vec<(String, i64, bool)> = truth
        .events
        .iter()
        .map(|e| (e.activity_name.clone(), e.end_t_us(&truth.log), false))
        .collect();
    truth_events.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

    let mut report = ScoreReport::default();
    for event in extracted {
        let slot = truth_events.iter_mut().find(|(name, end, used)| {
            !used && *name == event.activity_name && (event.end_t_us - *end).abs() <= align_window_us
        });
        match slot {
            Some(slot) => {
                slot.2 = true;
                report.true_pos += 1;
            }
            None => report.false_pos += 1,
        }
    }
    report.false_neg = truth_events.iter().filter(|(_, _, used)| !used).count() as u32;
    report
}

/// Per-name score breakdown; events are aligned globally first so a name
/// never steals another name's slot.
pub fn score_per_activity(
    extracted: &[ActivityEvent],
    truth: &GroundTruthLog,
    align_window_us: i64,
) -> BTreeMap<String, ScoreReport> {
    let mut out: BTreeMap<String, ScoreReport> = BTreeMap::new();
    let mut truth_events: Vec<(String, i64, bool)> = truth
        .events
        .iter()
        .map(|e| (e.activity_name.clone(), e.end_t_us(&truth.log), false))
        .collect();
    truth_events.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    for (name, _, _) in &truth_events {
        out.entry(name.clone()).or_default();
    }
    for event in extracted {
        let entry = out.entry(event.activity_name.clone()).or_default();
        let slot = truth_events.iter_mut().find(|(name, end, used)| {
            !used && *name == event.activity_name && (event.end_t_us - *end).abs() <= align_window_us
        });
        match slot {
            Some(slot) => {
                slot.2 = true;
                entry.true_pos += 1;
            }
            None => entry.false_pos += 1,
        }
    }
    for (name, _, used) in &truth_events {
        if !used {
            out.entry(name.clone()).or_default().false_neg += 1;
        }
    }
    out
}

/// Sweep and cross-validation configuration shared knobs.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub trials: u32,
    pub seed: u64,
    pub activities_per_trial: u32,
    /// Uniform spacing between one activity's end and the next trigger.
    pub spacing_us: (i64, i64),
    pub noise: NoiseModel,
    pub eps_floor_us: i64,
    pub align_window_us: i64,
    /// Rules applied to the synthesized log before extraction.
    pub rules: BackgroundRuleSet,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            trials: 20,
            seed: 1,
            activities_per_trial: 16,
            spacing_us: (3_000_000, 60_000_000),
            noise: NoiseModel::silent(),
            eps_floor_us: crate::siggen::DEFAULT_EPS_FLOOR_US,
            align_window_us: 5_000_000,
            rules: BackgroundRuleSet::default_well_known(),
        }
    }
}

/// One cell of the sensitivity table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub activity: String,
    pub r: f64,
    pub report: ScoreReport,
}

impl SweepRow {
    pub fn accuracy(&self) -> f64 {
        self.report.accuracy()
    }
}

// Pooled per-activity reports for one tolerance multiplier. Seeds derive
// from the r value's index in the caller's full list, so the result is
// independent of how the sweep is chunked across workers.
fn sweep_column(
    sigs: &SignatureSet,
    r: f64,
    r_idx: usize,
    cfg: &SweepConfig,
) -> Result<BTreeMap<String, ScoreReport>, EvalError> {
    let tols = tolerance_map(sigs, r, cfg.eps_floor_us);
    let mut column: BTreeMap<String, ScoreReport> = sigs
        .signatures()
        .iter()
        .map(|s| (s.activity_name.clone(), ScoreReport::default()))
        .collect();
    for trial in 0..cfg.trials {
        let trial_seed = derive_seed(cfg.seed, r_idx as u64 + 1, u64::from(trial) + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let schedule = random_schedule(sigs, cfg.activities_per_trial, cfg.spacing_us, &mut rng);
        let truth = synthesize(sigs, &schedule, &cfg.noise, trial_seed)?;
        let (foreground, _) = filter_background(&truth.log, &cfg.rules);
        // scoring is by activity name and end time, so the index frame of
        // the filtered log does not matter
        let shifted_truth = reframe_truth(&truth, &foreground);
        let extraction = act_extract(&foreground, sigs, &tols)?;
        for (name, report) in
            score_per_activity(&extraction.events, &shifted_truth, cfg.align_window_us)
        {
            if let Some(cell) = column.get_mut(&name) {
                cell.add(&report);
            }
        }
    }
    Ok(column)
}

/// For each tolerance multiplier, synthesize fresh logs, extract, and pool
/// per-activity scores over all trials. Rows are ordered by activity name,
/// then by the order of `r_values`.
pub fn sensitivity_sweep(
    sigs: &SignatureSet,
    r_values: &[f64],
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>, EvalError> {
    sensitivity_sweep_jobs(sigs, r_values, cfg, 1)
}

/// Sweep with the columns fanned out over `jobs` worker threads. Per-trial
/// seeds are keyed by each r value's position in `r_values`, so any job
/// count produces byte-identical results.
pub fn sensitivity_sweep_jobs(
    sigs: &SignatureSet,
    r_values: &[f64],
    cfg: &SweepConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    if cfg.trials < 20 {
        return Err(EvalError::InvalidConfig(format!(
            "trials must be at least 20, got {}",
            cfg.trials
        )));
    }
    let jobs = jobs.max(1).min(r_values.len().max(1));
    let columns: Vec<Result<BTreeMap<String, ScoreReport>, EvalError>> = if jobs <= 1 {
        r_values
            .iter()
            .enumerate()
            .map(|(r_idx, &r)| sweep_column(sigs, r, r_idx, cfg))
            .collect()
    } else {
        let mut slots: Vec<Option<Result<BTreeMap<String, ScoreReport>, EvalError>>> =
            (0..r_values.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for worker in 0..jobs {
                let indices: Vec<usize> =
                    (worker..r_values.len()).step_by(jobs).collect();
                handles.push(scope.spawn(move || {
                    indices
                        .into_iter()
                        .map(|r_idx| (r_idx, sweep_column(sigs, r_values[r_idx], r_idx, cfg)))
                        .collect::<Vec<_>>()
                }));
            }
            for handle in handles {
                for (r_idx, result) in handle.join().expect("sweep worker panicked") {
                    slots[r_idx] = Some(result);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("all columns filled")).collect()
    };

    let mut table: BTreeMap<String, Vec<ScoreReport>> = sigs
        .signatures()
        .iter()
        .map(|s| {
            (
                s.activity_name.clone(),
                vec![ScoreReport::default(); r_values.len()],
            )
        })
        .collect();
    for (r_idx, column) in columns.into_iter().enumerate() {
        for (name, report) in column? {
            if let Some(cells) = table.get_mut(&name) {
                cells[r_idx] = report;
            }
        }
    }
    let mut rows = Vec::new();
    for (activity, cells) in table {
        for (r_idx, report) in cells.into_iter().enumerate() {
            rows.push(SweepRow {
                activity: activity.clone(),
                r: r_values[r_idx],
                report,
            });
        }
    }
    Ok(rows)
}

// Rebind ground-truth packet indices onto a filtered view of the same log.
// Packets are matched by timestamp, which the filter preserves.
fn reframe_truth(truth: &GroundTruthLog, filtered: &TrafficLog) -> GroundTruthLog {
    let position_by_time: BTreeMap<i64, usize> = filtered
        .packets()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.t_us, i))
        .collect();
    let events = truth
        .events
        .iter()
        .map(|e| GroundTruthEvent {
            activity_name: e.activity_name.clone(),
            trigger_t_us: e.trigger_t_us,
            packet_indices: e
                .packet_indices
                .iter()
                .filter_map(|&i| position_by_time.get(&truth.log.packets()[i].t_us).copied())
                .collect(),
        })
        .collect();
    GroundTruthLog {
        log: filtered.clone(),
        events,
    }
}

/// One fold's outcome for one activity.
#[derive(Debug, Clone, PartialEq)]
pub struct XvalRow {
    pub activity: String,
    pub fold: u32,
    pub train_size: usize,
    pub test_size: usize,
    pub report: ScoreReport,
}

/// Cross-validation output: per-fold rows plus per-activity means.
#[derive(Debug, Clone, PartialEq)]
pub struct XvalReport {
    pub rows: Vec<XvalRow>,
    /// (activity, mean accuracy, mean precision, mean recall) over folds.
    pub means: Vec<(String, f64, f64, f64)>,
}

/// Options for cross-validation runs.
#[derive(Debug, Clone)]
pub struct XvalOptions {
    pub eps_floor_us: i64,
    pub align_window_us: i64,
    pub siggen: SigGenOptions,
}

impl Default for XvalOptions {
    fn default() -> Self {
        XvalOptions {
            eps_floor_us: crate::siggen::DEFAULT_EPS_FLOOR_US,
            align_window_us: 5_000_000,
            siggen: SigGenOptions::default(),
        }
    }
}

/// K-fold cross-validation per activity: captures are assigned to folds
/// round-robin, the signature is regenerated from each training split, and
/// extraction runs on every held-out capture.
pub fn cross_validate(
    captures: &[LabeledCapture],
    folds: u32,
    r: f64,
    opts: &XvalOptions,
) -> Result<XvalReport, EvalError> {
    if folds < 2 {
        return Err(EvalError::InvalidConfig(format!(
            "folds must be at least 2, got {folds}"
        )));
    }
    let mut groups: BTreeMap<String, Vec<&LabeledCapture>> = BTreeMap::new();
    for c in captures {
        groups.entry(c.activity_name.clone()).or_default().push(c);
    }
    if groups.is_empty() {
        return Err(EvalError::TooFewCaptures {
            activity: "<none>".into(),
            have: 0,
            need: folds as usize,
        });
    }

    let mut rows = Vec::new();
    let mut means = Vec::new();
    for (activity, group) in &groups {
        if group.len() < folds as usize {
            return Err(EvalError::TooFewCaptures {
                activity: activity.clone(),
                have: group.len(),
                need: folds as usize,
            });
        }
        let mut fold_scores = Vec::new();
        for fold in 0..folds {
            let (train, test): (Vec<_>, Vec<_>) = group
                .iter()
                .enumerate()
                .partition(|(i, _)| (*i as u32) % folds != fold);
            let train: Vec<LabeledCapture> =
                train.into_iter().map(|(_, c)| (*c).clone()).collect();
            let test: Vec<&LabeledCapture> = test.into_iter().map(|(_, c)| *c).collect();

            let sig = generate_signature(&train, &opts.siggen)?;
            let set = SignatureSet::new(vec![sig]).expect("single signature");
            let tols = tolerance_map(&set, r, opts.eps_floor_us);

            let mut fold_report = ScoreReport::default();
            for capture in &test {
                let truth = GroundTruthLog {
                    log: capture.foreground.clone(),
                    events: vec![GroundTruthEvent {
                        activity_name: activity.clone(),
                        trigger_t_us: capture.foreground.packets()[0].t_us,
                        packet_indices: (0..capture.foreground.len()).collect(),
                    }],
                };
                let extraction = act_extract(&capture.foreground, &set, &tols)?;
                fold_report.add(&score(&extraction.events, &truth, opts.align_window_us));
            }
            rows.push(XvalRow {
                activity: activity.clone(),
                fold,
                train_size: train.len(),
                test_size: test.len(),
                report: fold_report,
            });
            fold_scores.push(fold_report);
        }
        let k = fold_scores.len() as f64;
        means.push((
            activity.clone(),
            fold_scores.iter().map(ScoreReport::accuracy).sum::<f64>() / k,
            fold_scores.iter().map(ScoreReport::precision).sum::<f64>() / k,
            fold_scores.iter().map(ScoreReport::recall).sum::<f64>() / k,
        ));
    }
    Ok(XvalReport { rows, means })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IntervalStat, Signature};

    fn base(device: &str, letter: u8) -> BasePacket {
        BasePacket {
            device_addr: device.into(),
            server_name: "cloud.example".into(),
            server_port: 443,
            protocol: Protocol::Tcp,
            direction: Direction::DeviceToServer,
            length: 200 + u32::from(letter),
            payload_digest: None,
        }
    }

    fn sig(device: &str, name: &str, gaps_us: &[i64], stdev_us: f64) -> Signature {
        let mut t = 0i64;
        let mut packets = vec![TimedPacket::new(base(device, 0), 0)];
        for (i, g) in gaps_us.iter().enumerate() {
            t += g;
            packets.push(TimedPacket::new(base(device, i as u8 + 1), t));
        }
        let stats: Vec<IntervalStat> = gaps_us
            .iter()
            .map(|&g| IntervalStat {
                mean_us: g as f64,
                stdev_us,
                sample_count: 100,
            })
            .collect();
        Signature::new(name, device, packets, stats).unwrap()
    }

    #[test]
    fn zero_variance_no_noise_is_shifted_signature() {
        let s = sig("dev", "on", &[500_000, 700_000], 0.0);
        let set = SignatureSet::new(vec![s.clone()]).unwrap();
        let truth = synthesize(
            &set,
            &[("on".to_string(), 42_000_000)],
            &NoiseModel::silent(),
            7,
        )
        .unwrap();
        assert_eq!(truth.log.len(), 3);
        for (p, q) in truth.log.packets().iter().zip(s.packets()) {
            assert_eq!(p.t_us, 42_000_000 + q.t_us);
            assert_eq!(p.base, q.base);
        }
        assert_eq!(truth.events[0].packet_indices, vec![0, 1, 2]);
    }

    #[test]
    fn same_seed_same_log() {
        let s = sig("dev", "on", &[500_000], 25_000.0);
        let set = SignatureSet::new(vec![s]).unwrap();
        let noise = NoiseModel {
            chatter_per_minute: 6.0,
            ..NoiseModel::silent()
        };
        let schedule = vec![
            ("on".to_string(), 1_000_000),
            ("on".to_string(), 9_000_000),
        ];
        let a = synthesize(&set, &schedule, &noise, 99).unwrap();
        let b = synthesize(&set, &schedule, &noise, 99).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&set, &schedule, &noise, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_schedule_respects_spacing_protocol() {
        // the capture protocol: triggers separated by 3 to 60 seconds
        let s = sig("dev", "on", &[500_000], 0.0);
        let set = SignatureSet::new(vec![s.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let schedule = random_schedule(&set, 120, (3_000_000, 60_000_000), &mut rng);
        assert_eq!(schedule.len(), 120);
        let span = s.packets().last().unwrap().t_us;
        for pair in schedule.windows(2) {
            let gap = pair[1].1 - pair[0].1 - span;
            assert!((3_000_000..=60_000_000).contains(&gap), "gap {gap}");
        }
        // and the synthesized log is sequential
        assert!(synthesize(&set, &schedule, &NoiseModel::silent(), 3).is_ok());
    }

    #[test]
    fn overlapping_schedule_rejected() {
        let s = sig("dev", "on", &[5_000_000], 0.0);
        let set = SignatureSet::new(vec![s]).unwrap();
        let schedule = vec![
            ("on".to_string(), 1_000_000),
            ("on".to_string(), 2_000_000), // starts inside the first span
        ];
        let err = synthesize(&set, &schedule, &NoiseModel::silent(), 1).unwrap_err();
        assert!(matches!(err, EvalError::ScheduleOverlap { .. }));
        assert!(synthesize_concurrent(&set, &schedule, &NoiseModel::silent(), 1).is_ok());
    }

    #[test]
    fn unknown_activity_rejected() {
        let s = sig("dev", "on", &[5_000_000], 0.0);
        let set = SignatureSet::new(vec![s]).unwrap();
        assert_eq!(
            synthesize(&set, &[("off".to_string(), 0)], &NoiseModel::silent(), 1).unwrap_err(),
            EvalError::UnknownActivity("off".into())
        );
    }

    fn fake_event(name: &str, end_t_us: i64) -> ActivityEvent {
        ActivityEvent {
            activity_name: name.to_string(),
            matched: crate::matching::Match::new(vec![0]),
            start_t_us: end_t_us,
            end_t_us,
        }
    }

    fn truth_of(events: &[(&str, i64)]) -> GroundTruthLog {
        // one packet per event, in time order
        let mut sorted: Vec<(usize, &(&str, i64))> = events.iter().enumerate().collect();
        sorted.sort_by_key(|(_, (_, t))| *t);
        let mut packets = Vec::new();
        let mut indices = vec![0usize; events.len()];
        for (orig, (_, t)) in &sorted {
            indices[*orig] = packets.len();
            packets.push(TimedPacket::new(base("dev", 0), *t));
        }
        let log = TrafficLog::new(packets).unwrap();
        GroundTruthLog {
            events: events
                .iter()
                .enumerate()
                .map(|(i, (name, t))| GroundTruthEvent {
                    activity_name: name.to_string(),
                    trigger_t_us: *t,
                    packet_indices: vec![indices[i]],
                })
                .collect(),
            log,
        }
    }

    #[test]
    fn perfect_extraction_scores_ones() {
        let truth = truth_of(&[("a", 1_000_000), ("b", 9_000_000)]);
        let extracted = vec![fake_event("a", 1_000_000), fake_event("b", 9_000_000)];
        let s = score(&extracted, &truth, 5_000_000);
        assert_eq!((s.true_pos, s.false_pos, s.false_neg), (2, 0, 0));
        assert_eq!((s.accuracy(), s.precision(), s.recall()), (1.0, 1.0, 1.0));
    }

    #[test]
    fn nineteen_of_twenty_scores_point95() {
        let truth_events: Vec<(String, i64)> = (0..20)
            .map(|i| ("menu".to_string(), i64::from(i) * 10_000_000))
            .collect();
        let truth_refs: Vec<(&str, i64)> = truth_events
            .iter()
            .map(|(n, t)| (n.as_str(), *t))
            .collect();
        let truth = truth_of(&truth_refs);
        let extracted: Vec<ActivityEvent> = truth_refs[..19]
            .iter()
            .map(|(n, t)| fake_event(n, *t))
            .collect();
        let s = score(&extracted, &truth, 5_000_000);
        assert_eq!((s.true_pos, s.false_pos, s.false_neg), (19, 0, 1));
        assert_eq!(s.precision(), 1.0);
        assert_eq!(s.recall(), 0.95);
        assert_eq!(s.accuracy(), 0.95);
    }

    #[test]
    fn empty_extraction_boundary_convention() {
        let truth = truth_of(&[("a", 1_000_000)]);
        let s = score(&[], &truth, 5_000_000);
        assert_eq!(s.precision(), 1.0);
        assert_eq!(s.recall(), 0.0);
        assert_eq!(s.accuracy(), 0.0);
    }

    #[test]
    fn misaligned_or_misnamed_events_are_false_positives() {
        let truth = truth_of(&[("a", 1_000_000)]);
        let wrong_name = vec![fake_event("b", 1_000_000)];
        let s = score(&wrong_name, &truth, 5_000_000);
        assert_eq!((s.true_pos, s.false_pos, s.false_neg), (0, 1, 1));
        let too_far = vec![fake_event("a", 99_000_000)];
        let s = score(&too_far, &truth, 5_000_000);
        assert_eq!((s.true_pos, s.false_pos, s.false_neg), (0, 1, 1));
    }

    #[test]
    fn extraction_scored_against_itself_is_perfect() {
        let s = sig("dev", "on", &[500_000, 300_000], 1_000.0);
        let set = SignatureSet::new(vec![s]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let schedule = random_schedule(&set, 10, (3_000_000, 9_000_000), &mut rng);
        let truth = synthesize(&set, &schedule, &NoiseModel::silent(), 11).unwrap();
        let tols = tolerance_map(&set, 11.0, 100);
        let extraction = act_extract(&truth.log, &set, &tols).unwrap();
        let report = score(&extraction.events, &truth, 5_000_000);
        assert_eq!(report.accuracy(), 1.0);
    }

    #[test]
    fn sweep_zero_noise_zero_variance_is_flat_one() {
        let s = sig("dev", "on", &[500_000, 300_000], 0.0);
        let set = SignatureSet::new(vec![s]).unwrap();
        let cfg = SweepConfig {
            trials: 20,
            activities_per_trial: 4,
            spacing_us: (3_000_000, 6_000_000),
            ..SweepConfig::default()
        };
        let rows = sensitivity_sweep(&set, &[1.0, 5.0, 30.0], &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert_eq!(row.accuracy(), 1.0, "r={}", row.r);
        }
    }

    #[test]
    fn sweep_single_r_single_column() {
        let s = sig("dev", "on", &[500_000], 0.0);
        let t = sig("dev", "off", &[900_000], 0.0);
        let set = SignatureSet::new(vec![s, t]).unwrap();
        let cfg = SweepConfig {
            trials: 20,
            activities_per_trial: 4,
            spacing_us: (3_000_000, 6_000_000),
            ..SweepConfig::default()
        };
        let rows = sensitivity_sweep(&set, &[11.0], &cfg).unwrap();
        assert_eq!(rows.len(), 2); // one per activity
        assert!(rows.iter().all(|row| row.r == 11.0));
    }

    #[test]
    fn sweep_rejects_too_few_trials() {
        let s = sig("dev", "on", &[500_000], 0.0);
        let set = SignatureSet::new(vec![s]).unwrap();
        let cfg = SweepConfig {
            trials: 5,
            ..SweepConfig::default()
        };
        assert!(matches!(
            sensitivity_sweep(&set, &[1.0], &cfg).unwrap_err(),
            EvalError::InvalidConfig(_)
        ));
    }

    fn synth_captures(count: u32, seed: u64) -> Vec<LabeledCapture> {
        let s = sig("dev", "on", &[500_000, 300_000], 2_000.0);
        let set = SignatureSet::new(vec![s]).unwrap();
        (0..count)
            .map(|i| {
                let truth = synthesize(
                    &set,
                    &[("on".to_string(), 1_000_000)],
                    &NoiseModel::silent(),
                    derive_seed(seed, u64::from(i), 0),
                )
                .unwrap();
                LabeledCapture {
                    activity_name: "on".into(),
                    device_label: "dev".into(),
                    foreground: truth.log,
                }
            })
            .collect()
    }

    #[test]
    fn xval_120_captures_6_folds_splits_100_20() {
        let captures = synth_captures(120, 17);
        let report = cross_validate(&captures, 6, 11.0, &XvalOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 6);
        for row in &report.rows {
            assert_eq!(row.train_size, 100);
            assert_eq!(row.test_size, 20);
        }
        // clean captures, generous tolerance: perfect recovery
        assert!(report.means.iter().all(|(_, a, p, r)| {
            (*a - 1.0).abs() < 1e-12 && (*p - 1.0).abs() < 1e-12 && (*r - 1.0).abs() < 1e-12
        }));
    }

    #[test]
    fn xval_40_captures_4_folds_splits_30_10() {
        let captures = synth_captures(40, 23);
        let report = cross_validate(&captures, 4, 11.0, &XvalOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            assert_eq!(row.train_size, 30);
            assert_eq!(row.test_size, 10);
        }
    }

    #[test]
    fn xval_single_capture_rejected() {
        let captures = synth_captures(1, 3);
        assert!(matches!(
            cross_validate(&captures, 4, 11.0, &XvalOptions::default()).unwrap_err(),
            EvalError::TooFewCaptures { .. }
        ));
    }

    #[test]
    fn xval_uneven_captures_distributed_round_robin() {
        let captures = synth_captures(10, 31);
        let report = cross_validate(&captures, 4, 11.0, &XvalOptions::default()).unwrap();
        let sizes: Vec<usize> = report.rows.iter().map(|r| r.test_size).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
    }
}
