//! Timing synchronization between two subtitle documents.
//!
//! Two cues match when both their start and end times agree within the
//! tolerance. A document pair is synchronized when the matched cues cover at
//! least `min_match_fraction` of the smaller document. When they are not,
//! [`recover_shift`] searches for the constant offset that best aligns the
//! second document to the first.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::subtitle::SubtitleDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftSearch {
    /// Offsets voted by pairwise cue-start differences, then scored exactly.
    #[default]
    Voting,
    /// Every offset on the step grid in `[-max_shift, max_shift]`.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncPolicy {
    /// Largest start/end discrepancy for two cues to count as matched.
    pub tolerance_ms: u64,
    /// Fraction of the smaller document's cues that must match.
    pub min_match_fraction: f64,
    /// Half-width of the offset search range.
    pub max_shift_ms: u64,
    pub shift_step_ms: u64,
    pub search: ShiftSearch,
    /// Vote buckets kept for exact scoring.
    pub top_candidates: usize,
}

impl Default for SyncPolicy {
    fn default() -> Self {
        SyncPolicy {
            tolerance_ms: 200,
            min_match_fraction: 0.6,
            max_shift_ms: 120_000,
            shift_step_ms: 10,
            search: ShiftSearch::Voting,
            top_candidates: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyncError {
    #[error("cannot search for a shift: {0} document has no cues")]
    NoCandidates(&'static str),
    #[error("invalid sync policy: {0}")]
    InvalidPolicy(String),
}

impl SyncPolicy {
    pub fn validate(&self) -> Result<(), SyncError> {
        let bad = |msg: &str| Err(SyncError::InvalidPolicy(msg.to_owned()));
        if !(self.min_match_fraction > 0.0 && self.min_match_fraction <= 1.0) {
            return bad("min_match_fraction must be in (0, 1]");
        }
        if self.shift_step_ms == 0 {
            return bad("shift_step_ms must be positive");
        }
        if self.max_shift_ms > 0 && self.shift_step_ms > self.max_shift_ms {
            return bad("shift_step_ms must not exceed max_shift_ms");
        }
        if self.top_candidates == 0 {
            return bad("top_candidates must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncVerdict {
    pub matched_count: usize,
    pub match_fraction: f64,
    pub synchronized: bool,
    pub applied_shift_ms: i64,
}

impl SyncVerdict {
    fn new(matched: usize, len_a: usize, len_b: usize, policy: &SyncPolicy, shift: i64) -> Self {
        let denom = len_a.min(len_b);
        let match_fraction = if denom == 0 {
            0.0
        } else {
            matched as f64 / denom as f64
        };
        SyncVerdict {
            matched_count: matched,
            match_fraction,
            synchronized: denom > 0 && match_fraction >= policy.min_match_fraction,
            applied_shift_ms: shift,
        }
    }
}

type Span = (u64, u64);

fn spans(doc: &SubtitleDocument) -> Vec<Span> {
    doc.cues.iter().map(|c| (c.start_ms, c.end_ms)).collect()
}

#[inline]
fn qualifies(x: Span, y: Span, tol: u64) -> bool {
    x.0.abs_diff(y.0) <= tol && x.1.abs_diff(y.1) <= tol
}

/// Maximum one-to-one monotone matching between two span lists sorted by
/// `(start, end)`.
///
/// Qualifying pairs are collected with a sliding window over `b`, then the
/// longest chain increasing in both indices is found by patience sorting.
/// Pairs of one `a` cue are visited with `j` descending so a chain never
/// uses the same cue twice.
fn match_spans(a: &[Span], b: &[Span], tol: u64, mut on_match: impl FnMut(usize, usize)) {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut lo = 0;
    for (i, &x) in a.iter().enumerate() {
        while lo < b.len() && b[lo].0 + tol < x.0 {
            lo += 1;
        }
        let first = pairs.len();
        for (j, &y) in b.iter().enumerate().skip(lo) {
            if y.0 > x.0 + tol {
                break;
            }
            if qualifies(x, y, tol) {
                pairs.push((i, j));
            }
        }
        pairs[first..].reverse();
    }

    // tails[k] ends the best known chain of length k + 1 (smallest final j).
    let mut tails: Vec<usize> = Vec::new();
    let mut prev: Vec<Option<usize>> = vec![None; pairs.len()];
    for (p, &(_, j)) in pairs.iter().enumerate() {
        let k = tails.partition_point(|&t| pairs[t].1 < j);
        prev[p] = k.checked_sub(1).map(|k| tails[k]);
        if k == tails.len() {
            tails.push(p);
        } else {
            tails[k] = p;
        }
    }
    let mut chain = Vec::with_capacity(tails.len());
    let mut cur = tails.last().copied();
    while let Some(p) = cur {
        chain.push(pairs[p]);
        cur = prev[p];
    }
    for &(i, j) in chain.iter().rev() {
        on_match(i, j);
    }
}

fn count_matches(a: &[Span], b: &[Span], tol: u64) -> usize {
    let mut n = 0;
    match_spans(a, b, tol, |_, _| n += 1);
    n
}

/// Largest one-to-one monotone matching of cue positions, as
/// `(index in a, index in b)` pairs in increasing order.
pub fn match_cues(a: &SubtitleDocument, b: &SubtitleDocument, tolerance_ms: u64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    match_spans(&spans(a), &spans(b), tolerance_ms, |i, j| out.push((i, j)));
    out
}

pub fn check_sync(a: &SubtitleDocument, b: &SubtitleDocument, policy: &SyncPolicy) -> SyncVerdict {
    let matched = count_matches(&spans(a), &spans(b), policy.tolerance_ms);
    SyncVerdict::new(matched, a.len(), b.len(), policy, 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRecovery {
    /// Offset to add to the second document's timeline.
    pub delta_ms: i64,
    pub verdict: SyncVerdict,
}

/// Same clamping and ordering as `shift_document`, on bare spans.
fn shifted(b: &[Span], delta: i64) -> Vec<Span> {
    let shift = |t: u64| (t as i64 + delta).max(0) as u64;
    let mut out: Vec<Span> = b.iter().map(|&(s, e)| (shift(s), shift(e))).collect();
    if delta < 0 && out.first().is_some_and(|s| s.0 == 0) {
        out.sort();
    }
    out
}

/// Quality of one candidate offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Score {
    matched: usize,
    /// Summed start and end discrepancy over the matched cues.
    residual: u64,
    delta: i64,
}

impl Score {
    /// Smaller is better: more matches, then tighter timings, then smaller
    /// `|delta|`, then smaller `delta`.
    fn key(&self) -> (std::cmp::Reverse<usize>, u64, u64, i64) {
        (std::cmp::Reverse(self.matched), self.residual, self.delta.unsigned_abs(), self.delta)
    }
}

fn score_at(a: &[Span], b: &[Span], delta: i64, tol: u64) -> Score {
    let b = shifted(b, delta);
    let (mut matched, mut residual) = (0, 0);
    match_spans(a, &b, tol, |i, j| {
        matched += 1;
        residual += a[i].0.abs_diff(b[j].0) + a[i].1.abs_diff(b[j].1);
    });
    Score { matched, residual, delta }
}

/// Finds the constant offset for `b` that maximizes matched cues against `a`.
/// Among offsets with equally many matches the one whose matched cues agree
/// most closely wins.
pub fn recover_shift(
    a: &SubtitleDocument,
    b: &SubtitleDocument,
    policy: &SyncPolicy,
) -> Result<ShiftRecovery, SyncError> {
    policy.validate()?;
    if policy.max_shift_ms == 0 {
        return Err(SyncError::InvalidPolicy("max_shift_ms must be positive".into()));
    }
    if a.is_empty() {
        return Err(SyncError::NoCandidates("first"));
    }
    if b.is_empty() {
        return Err(SyncError::NoCandidates("second"));
    }
    let (sa, sb) = (spans(a), spans(b));
    let tol = policy.tolerance_ms;
    let score = |delta: i64| score_at(&sa, &sb, delta, tol);

    let best = match policy.search {
        ShiftSearch::Voting => voted_offsets(&sa, &sb, policy)
            .into_iter()
            .map(score)
            .min_by_key(Score::key)
            .expect("zero is always a candidate"),
        ShiftSearch::Exhaustive => {
            let steps = (policy.max_shift_ms / policy.shift_step_ms) as i64;
            let step = policy.shift_step_ms as i64;
            (-steps..=steps)
                .into_par_iter()
                .map(|k| score(k * step))
                .min_by_key(Score::key)
                .expect("grid is never empty")
        }
    };
    Ok(ShiftRecovery {
        delta_ms: best.delta,
        verdict: SyncVerdict::new(best.matched, a.len(), b.len(), policy, best.delta),
    })
}

/// Candidate offsets from start-time differences.
///
/// Every pair of starts within `max_shift_ms` of each other votes for its
/// difference. Differences are bucketed at `shift_step_ms`; a bucket's score
/// also counts neighbours within the tolerance so that jittered timings do
/// not split the vote. Every grid offset within reach of a winning bucket
/// becomes a candidate, along with zero.
fn voted_offsets(a: &[Span], b: &[Span], policy: &SyncPolicy) -> Vec<i64> {
    let max_shift = policy.max_shift_ms;
    let step = policy.shift_step_ms as i64;

    let mut b_starts: Vec<u64> = b.iter().map(|s| s.0).collect();
    b_starts.sort_unstable();
    let mut diffs = Vec::new();
    let mut lo = 0;
    for &(x, _) in a {
        while lo < b_starts.len() && b_starts[lo] + max_shift < x {
            lo += 1;
        }
        diffs.extend(
            b_starts[lo..]
                .iter()
                .take_while(|&&y| y <= x + max_shift)
                .map(|&y| x as i64 - y as i64),
        );
    }
    diffs.sort_unstable();

    // (bucket, [first, last) range in diffs)
    let mut buckets: Vec<(i64, usize, usize)> = Vec::new();
    for (pos, d) in diffs.iter().enumerate() {
        let bucket = d.div_euclid(step);
        match buckets.last_mut() {
            Some(last) if last.0 == bucket => last.2 = pos + 1,
            _ => buckets.push((bucket, pos, pos + 1)),
        }
    }

    let radius = (policy.tolerance_ms as i64 + step - 1) / step;
    let mut scored: Vec<(usize, i64, usize)> = Vec::with_capacity(buckets.len());
    let (mut left, mut right) = (0, 0);
    for (k, &(bucket, _, _)) in buckets.iter().enumerate() {
        while buckets[left].0 < bucket - radius {
            left += 1;
        }
        while right < buckets.len() && buckets[right].0 <= bucket + radius {
            right += 1;
        }
        let votes = buckets[right - 1].2 - buckets[left].1;
        scored.push((votes, bucket * step, k));
    }
    scored.sort_by(|x, y| {
        y.0.cmp(&x.0)
            .then(x.1.unsigned_abs().cmp(&y.1.unsigned_abs()))
            .then(x.1.cmp(&y.1))
    });

    let max_k = (max_shift / policy.shift_step_ms) as i64;
    let mut out = vec![0];
    for &(_, centre, _) in scored.iter().take(policy.top_candidates) {
        let k = centre / step;
        out.extend(((k - radius - 1).max(-max_k)..=(k + radius + 1).min(max_k)).map(|k| k * step));
    }
    out.sort_unstable();
    out.dedup();
    out
}
