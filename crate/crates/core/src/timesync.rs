//! Cross-agent timestamp pairing and pose interpolation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{slerp, Pose};

/// Half a 30 Hz frame period.
pub const DEFAULT_MAX_SKEW: f64 = 0.0167;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeSyncError {
    #[error("query time {query} outside [{start}, {end}]")]
    OutOfRange { query: f64, start: f64, end: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePair {
    pub a_index: usize,
    pub b_index: usize,
    pub a_time: f64,
    pub b_time: f64,
}

impl TimePair {
    pub fn skew(&self) -> f64 {
        (self.b_time - self.a_time).abs()
    }
}

/// One-to-one nearest-timestamp pairing: candidate pairs within `max_skew` are accepted
/// greedily in order of increasing `|dt|` (ties broken by index). Result is ordered by `a_index`.
pub fn pair_nearest_timestamp(a: &[f64], b: &[f64], max_skew: f64) -> Vec<TimePair> {
    let mut candidates = Vec::new();
    let mut lo = 0;
    for (i, &ta) in a.iter().enumerate() {
        while lo < b.len() && b[lo] < ta - max_skew {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() && b[j] <= ta + max_skew {
            if (b[j] - ta).abs() <= max_skew {
                candidates.push(((b[j] - ta).abs(), i, j));
            }
            j += 1;
        }
    }
    greedy_select(candidates, a, b)
}

fn greedy_select(mut candidates: Vec<(f64, usize, usize)>, a: &[f64], b: &[f64]) -> Vec<TimePair> {
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push(TimePair { a_index: i, b_index: j, a_time: a[i], b_time: b[j] });
        }
    }
    out.sort_by_key(|p| p.a_index);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub time: f64,
    pub pose: Pose,
}

impl StampedPose {
    pub fn new(time: f64, pose: Pose) -> Self {
        Self { time, pose }
    }
}

/// Linear interpolation of translation and slerp of rotation at `t_query`.
pub fn interp_pose(before: &StampedPose, after: &StampedPose, t_query: f64) -> Result<Pose, TimeSyncError> {
    if !(t_query >= before.time && t_query <= after.time) {
        return Err(TimeSyncError::OutOfRange { query: t_query, start: before.time, end: after.time });
    }
    let span = after.time - before.time;
    if span <= 0.0 {
        return Ok(before.pose);
    }
    let s = (t_query - before.time) / span;
    let translation = before.pose.translation + (after.pose.translation - before.pose.translation) * s;
    Ok(Pose::new(slerp(&before.pose.rotation, &after.pose.rotation, s), translation))
}

/// Interpolates a time-sorted pose sequence at `t`.
pub fn interp_sequence(seq: &[StampedPose], t: f64) -> Result<Pose, TimeSyncError> {
    let (start, end) = match (seq.first(), seq.last()) {
        (Some(f), Some(l)) => (f.time, l.time),
        _ => return Err(TimeSyncError::OutOfRange { query: t, start: f64::NAN, end: f64::NAN }),
    };
    if !(t >= start && t <= end) {
        return Err(TimeSyncError::OutOfRange { query: t, start, end });
    }
    let idx = seq.partition_point(|s| s.time <= t);
    if idx == 0 {
        return Ok(seq[0].pose);
    }
    if idx >= seq.len() {
        return Ok(seq[seq.len() - 1].pose);
    }
    interp_pose(&seq[idx - 1], &seq[idx], t)
}
