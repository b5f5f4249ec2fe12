//! Time-sensitive subsequence matching.
//!
//! A signature matches a log at an increasing index sequence when every
//! adjacent packet pair agrees on base identity and reproduces the
//! signature's inter-packet interval within a per-gap tolerance. All such
//! matches are captured in a layered DAG whose level-n-to-level-1 paths are
//! in bijection with the valid matches; the DAG is polynomial-sized even
//! when the match count is exponential.
//!
//! Interval arithmetic is integer microseconds throughout, so tolerance
//! boundaries are exact.

use thiserror::Error;

use crate::model::{Signature, TimedPacket, TrafficLog};
use crate::siggen::ToleranceVector;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("tolerance vector has {got} entries, signature needs {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// One match: strictly increasing 0-based log indices, one per signature
/// packet. Lexicographic comparison of matches is comparison of the index
/// sequences.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Match {
    indices: Vec<usize>,
}

impl Match {
    pub fn new(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Match { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn first(&self) -> usize {
        self.indices[0]
    }

    pub fn last(&self) -> usize {
        *self.indices.last().expect("match is never empty")
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// 1-based rendering for command-line output.
    pub fn to_one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }
}

#[derive(Debug, Clone)]
struct DagVertex {
    log_idx: usize,
    /// Positions of predecessor vertices in the previous level's vector.
    preds: Vec<usize>,
}

/// The layered match DAG. Level `j` (1-based) holds the log positions that
/// can play the role of the `j`th signature packet with a valid chain back
/// to level 1; edges point from level `j` to level `j-1`.
#[derive(Debug, Clone)]
pub struct MatchDag {
    m: usize,
    n: usize,
    levels: Vec<Vec<DagVertex>>,
}

impl MatchDag {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn vertex_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.levels
            .iter()
            .flat_map(|lvl| lvl.iter().map(|v| v.preds.len()))
            .sum()
    }

    /// All vertices as (0-based log index, 1-based level), level-major order.
    pub fn vertices(&self) -> Vec<(usize, usize)> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(j, lvl)| lvl.iter().map(move |v| (v.log_idx, j + 1)))
            .collect()
    }

    /// All edges as ((i, j), (k, j-1)) pairs with 0-based log indices and
    /// 1-based levels.
    pub fn edges(&self) -> Vec<((usize, usize), (usize, usize))> {
        let mut out = Vec::new();
        for j in 1..self.levels.len() {
            for v in &self.levels[j] {
                for &p in &v.preds {
                    out.push(((v.log_idx, j + 1), (self.levels[j - 1][p].log_idx, j)));
                }
            }
        }
        out
    }

    /// True when at least one full match exists.
    pub fn has_match(&self) -> bool {
        self.levels.last().map(|lvl| !lvl.is_empty()).unwrap_or(false)
    }

    // For each level, which vertices lie on some path that completes at the
    // last level. Every last-level vertex chains back to level 1 by
    // construction, so a vertex is on a full match iff it reaches the end.
    fn alive(&self) -> Vec<Vec<bool>> {
        let n = self.levels.len();
        let mut alive: Vec<Vec<bool>> = self.levels.iter().map(|l| vec![false; l.len()]).collect();
        if n == 0 {
            return alive;
        }
        for flag in &mut alive[n - 1] {
            *flag = true;
        }
        for j in (1..n).rev() {
            for (pos, v) in self.levels[j].iter().enumerate() {
                if alive[j][pos] {
                    for &p in &v.preds {
                        alive[j - 1][p] = true;
                    }
                }
            }
        }
        alive
    }

    // Forward adjacency: successors[j][pos] lists positions in level j+1,
    // ascending (levels are stored in ascending log order).
    fn successors(&self) -> Vec<Vec<Vec<usize>>> {
        let n = self.levels.len();
        let mut succ: Vec<Vec<Vec<usize>>> = self
            .levels
            .iter()
            .map(|l| vec![Vec::new(); l.len()])
            .collect();
        for j in 1..n {
            for (pos, v) in self.levels[j].iter().enumerate() {
                for &p in &v.preds {
                    succ[j - 1][p].push(pos);
                }
            }
        }
        succ
    }
}

/// Interval check for one packet pair against one signature gap: both base
/// identities must agree and the observed interval must sit within `delta`
/// microseconds of the signature interval.
pub fn delta_valid(
    log_earlier: &TimedPacket,
    log_later: &TimedPacket,
    sig_earlier: &TimedPacket,
    sig_later: &TimedPacket,
    delta_us: i64,
) -> bool {
    log_earlier.base == sig_earlier.base
        && log_later.base == sig_later.base
        && ((log_later.t_us - log_earlier.t_us) - (sig_later.t_us - sig_earlier.t_us)).abs()
            <= delta_us
}

/// Build the match DAG of `sig` in `log` under the per-gap tolerances.
///
/// A level-1 vertex exists wherever the log packet equals the signature's
/// first base packet. A level-j vertex exists where the log packet equals
/// the j-th base packet and some earlier level-(j-1) vertex closes the gap
/// within tolerance; each such pair contributes one edge.
pub fn sig_match(
    log: &TrafficLog,
    sig: &Signature,
    eps: &ToleranceVector,
) -> Result<MatchDag, MatchError> {
    let n = sig.len();
    let m = log.len();
    if eps.len() != n - 1 {
        return Err(MatchError::DimensionMismatch {
            expected: n - 1,
            got: eps.len(),
        });
    }
    let packets = log.packets();
    let sig_packets = sig.packets();

    // log positions whose base matches each signature level
    let candidates: Vec<Vec<usize>> = sig_packets
        .iter()
        .map(|q| {
            packets
                .iter()
                .enumerate()
                .filter(|(_, p)| p.base == q.base)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    let mut levels: Vec<Vec<DagVertex>> = Vec::with_capacity(n);
    levels.push(
        candidates[0]
            .iter()
            .map(|&i| DagVertex {
                log_idx: i,
                preds: Vec::new(),
            })
            .collect(),
    );

    for j in 1..n {
        let tau = sig_packets[j].t_us - sig_packets[j - 1].t_us;
        let eps_j = eps.epsilons_us()[j - 1];
        let prev = &levels[j - 1];
        let mut level: Vec<DagVertex> = Vec::new();
        for &i in &candidates[j] {
            let t_i = packets[i].t_us;
            // valid predecessors sit in a fixed time window; the previous
            // level is sorted by log index, hence by timestamp
            let lo = t_i - tau - eps_j;
            let hi = (t_i - tau + eps_j).min(t_i - 1);
            let start = prev.partition_point(|v| packets[v.log_idx].t_us < lo);
            let mut preds = Vec::new();
            for (offset, v) in prev[start..].iter().enumerate() {
                if packets[v.log_idx].t_us > hi {
                    break;
                }
                preds.push(start + offset);
            }
            if !preds.is_empty() {
                level.push(DagVertex { log_idx: i, preds });
            }
        }
        levels.push(level);
    }
    Ok(MatchDag { m, n, levels })
}

/// Result of match enumeration; `truncated` is set when more matches exist
/// than the requested limit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enumeration {
    pub matches: Vec<Match>,
    pub truncated: bool,
}

/// Enumerate matches in lexicographic index order, up to `limit`. The limit
/// is mandatory because the number of matches can grow exponentially; pass
/// `usize::MAX` when the instance is known to be small.
pub fn enumerate_matches(dag: &MatchDag, limit: usize) -> Enumeration {
    let mut out = Enumeration {
        matches: Vec::new(),
        truncated: false,
    };
    if !dag.has_match() || limit == 0 {
        out.truncated = dag.has_match();
        return out;
    }
    let alive = dag.alive();
    let succ = dag.successors();
    let n = dag.levels.len();

    // depth-first in ascending-successor order = lexicographic emission
    let mut chain_indices: Vec<usize> = Vec::with_capacity(n);

    #[allow(clippy::too_many_arguments)]
    fn walk(
        dag: &MatchDag,
        alive: &[Vec<bool>],
        succ: &[Vec<Vec<usize>>],
        level: usize,
        pos: usize,
        chain_indices: &mut Vec<usize>,
        out: &mut Enumeration,
        limit: usize,
    ) -> bool {
        chain_indices.push(dag.levels[level][pos].log_idx);
        let done = if level + 1 == dag.levels.len() {
            if out.matches.len() == limit {
                out.truncated = true;
                true
            } else {
                out.matches.push(Match::new(chain_indices.clone()));
                false
            }
        } else {
            let mut stop = false;
            for &next in &succ[level][pos] {
                if alive[level + 1][next]
                    && walk(dag, alive, succ, level + 1, next, chain_indices, out, limit)
                {
                    stop = true;
                    break;
                }
            }
            stop
        };
        chain_indices.pop();
        done
    }

    for pos in 0..dag.levels[0].len() {
        if alive[0][pos]
            && walk(dag, &alive, &succ, 0, pos, &mut chain_indices, &mut out, limit)
        {
            break;
        }
    }
    out
}

/// The lexicographically smallest match, computed without enumerating all
/// paths: mark vertices that reach the last level, then greedily extend
/// from the smallest viable first index.
pub fn earliest_match(dag: &MatchDag) -> Option<Match> {
    if !dag.has_match() {
        return None;
    }
    let alive = dag.alive();
    let succ = dag.successors();
    let n = dag.levels.len();

    let mut pos = (0..dag.levels[0].len()).find(|&p| alive[0][p])?;
    let mut indices = Vec::with_capacity(n);
    indices.push(dag.levels[0][pos].log_idx);
    for level in 0..n - 1 {
        let next = succ[level][pos]
            .iter()
            .copied()
            .find(|&q| alive[level + 1][q])
            .expect("alive vertex below the last level has an alive successor");
        indices.push(dag.levels[level + 1][next].log_idx);
        pos = next;
    }
    Some(Match::new(indices))
}

/// Greedy left-to-right extraction of pairwise disjoint matches: take the
/// earliest match, remove exactly its packets, rebuild, repeat. Returned
/// indices refer to the original log.
pub fn nonoverlapping_matches(
    log: &TrafficLog,
    sig: &Signature,
    eps: &ToleranceVector,
) -> Result<Vec<Match>, MatchError> {
    let mut alive: Vec<usize> = (0..log.len()).collect();
    let mut out = Vec::new();
    loop {
        let packets: Vec<TimedPacket> = alive
            .iter()
            .map(|&i| log.packets()[i].clone())
            .collect();
        let view = TrafficLog::new(packets).expect("subsequence stays monotonic");
        let dag = sig_match(&view, sig, eps)?;
        let Some(found) = earliest_match(&dag) else {
            break;
        };
        let original: Vec<usize> = found.indices().iter().map(|&i| alive[i]).collect();
        let taken: std::collections::BTreeSet<usize> = original.iter().copied().collect();
        alive.retain(|i| !taken.contains(i));
        out.push(Match::new(original));
    }
    Ok(out)
}
