//! Cross-agent feature association: periodic guidance matches between the two front
//! cameras, per-frame intra-agent prediction, and ID inheritance through the ledger.
//!
//! Matching and optical flow are injected oracles so the bookkeeping and scheduling can
//! be exercised without image processing.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::PixelObs;
use crate::seed::rng_for;
use crate::sim::SensorStream;
use crate::timesync::{pair_nearest_timestamp, DEFAULT_MAX_SKEW};

/// Live co-visible track pairs kept at most.
pub const DEFAULT_PAIR_CAPACITY: usize = 200;
/// Inference time of the cross-agent matcher.
pub const DEFAULT_GUIDANCE_LATENCY_S: f64 = 0.074;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssocError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    pub frame_rate_hz: f64,
    pub guidance_latency_s: f64,
}

impl GuidanceSchedule {
    pub fn new(frame_rate_hz: f64, guidance_latency_s: f64) -> Result<Self, AssocError> {
        if !(frame_rate_hz > 0.0 && frame_rate_hz.is_finite()) {
            return Err(AssocError::InvalidSchedule(format!("frame rate {frame_rate_hz}")));
        }
        if !(guidance_latency_s >= 0.0 && guidance_latency_s.is_finite()) {
            return Err(AssocError::InvalidSchedule(format!("latency {guidance_latency_s}")));
        }
        Ok(Self { frame_rate_hz, guidance_latency_s })
    }

    /// Frames skipped while a guidance inference is in flight: `ceil(latency * rate) - 1`, at least 0.
    pub fn skip(&self) -> usize {
        let frames = (self.guidance_latency_s * self.frame_rate_hz - 1e-9).ceil();
        (frames as i64 - 1).max(0) as usize
    }

    pub fn period_frames(&self) -> usize {
        self.skip() + 1
    }

    pub fn is_guidance_frame(&self, frame: usize) -> bool {
        frame % self.period_frames() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationMode {
    GuidanceOnly,
    GuidancePlusPrediction,
}

/// Model association rate in Hz.
pub fn association_rate(schedule: &GuidanceSchedule, mode: AssociationMode) -> f64 {
    match mode {
        AssociationMode::GuidanceOnly => schedule.frame_rate_hz / schedule.period_frames() as f64,
        AssociationMode::GuidancePlusPrediction => schedule.frame_rate_hz,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub track_id: u64,
    pub agent: u8,
    /// `(frame, observation)`, frames strictly increasing.
    pub history: Vec<(usize, PixelObs)>,
    pub alive: bool,
    pub birth_frame: usize,
    /// Scene identity of the tracked point (known to the oracles only).
    pub landmark: u64,
}

impl FeatureTrack {
    pub fn new(track_id: u64, agent: u8, frame: usize, obs: PixelObs) -> Self {
        Self { track_id, agent, history: vec![(frame, obs)], alive: true, birth_frame: frame, landmark: obs.feature_id }
    }

    pub fn last_frame(&self) -> usize {
        self.history.last().map_or(self.birth_frame, |h| h.0)
    }

    pub fn observation_at(&self, frame: usize) -> Option<&PixelObs> {
        self.history.binary_search_by_key(&frame, |h| h.0).ok().map(|i| &self.history[i].1)
    }

    /// Observed at every frame in `[from, to]`.
    pub fn covers(&self, from: usize, to: usize) -> bool {
        (from..=to).all(|f| self.observation_at(f).is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossPair {
    pub track_id_0: u64,
    pub track_id_1: u64,
    pub first_matched_frame: usize,
    pub alive: bool,
}

/// Proposes correspondences between two detection sets as `(index0, index1)`.
pub trait Matcher {
    fn propose(&mut self, obs0: &[PixelObs], obs1: &[PixelObs]) -> Vec<(usize, usize)>;
}

/// Follows one track into the next frame, or reports it lost.
pub trait FlowOracle {
    fn follow(&mut self, track: &FeatureTrack, frame: usize) -> Option<PixelObs>;
}

/// Matches detections with identical scene ids.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruthMatcher;

impl Matcher for TruthMatcher {
    fn propose(&mut self, obs0: &[PixelObs], obs1: &[PixelObs]) -> Vec<(usize, usize)> {
        let index: BTreeMap<u64, usize> = obs1.iter().enumerate().map(|(j, o)| (o.feature_id, j)).collect();
        obs0.iter().enumerate().filter_map(|(i, o)| index.get(&o.feature_id).map(|&j| (i, j))).collect()
    }
}

/// Ground-truth flow with an independent per-step loss probability.
pub struct DropoutFlow<F> {
    pub dropout: f64,
    pub rng: ChaCha8Rng,
    lookup: F,
}

impl<F> DropoutFlow<F>
where
    F: FnMut(u8, u64, usize) -> Option<PixelObs>,
{
    /// `lookup(agent, landmark, frame)` returns the true observation if the point is visible.
    pub fn new(dropout: f64, rng: ChaCha8Rng, lookup: F) -> Self {
        Self { dropout, rng, lookup }
    }
}

impl<F> FlowOracle for DropoutFlow<F>
where
    F: FnMut(u8, u64, usize) -> Option<PixelObs>,
{
    fn follow(&mut self, track: &FeatureTrack, frame: usize) -> Option<PixelObs> {
        let obs = (self.lookup)(track.agent, track.landmark, frame)?;
        let survive = self.dropout <= 0.0 || (self.dropout < 1.0 && self.rng.random::<f64>() >= self.dropout);
        survive.then_some(obs)
    }
}

/// Extends every live track into `frame`; tracks the oracle loses are marked dead.
pub fn predict_tracks<'a, I, O>(tracks: I, frame: usize, flow: &mut O)
where
    I: IntoIterator<Item = &'a mut FeatureTrack>,
    O: FlowOracle + ?Sized,
{
    for t in tracks {
        if !t.alive || t.last_frame() >= frame {
            continue;
        }
        match flow.follow(t, frame) {
            Some(obs) => t.history.push((frame, obs)),
            None => t.alive = false,
        }
    }
}

/// Frame-`start` tracks still alive after `0..=horizon` frames.
pub fn retention_stats(tracks: &[FeatureTrack], start: usize, horizon: usize) -> Vec<usize> {
    let cohort: Vec<&FeatureTrack> = tracks.iter().filter(|t| t.birth_frame == start).collect();
    (0..=horizon).map(|h| cohort.iter().filter(|t| t.history.len() > h).count()).collect()
}

#[derive(Debug, Clone, Default)]
pub struct AssociationLedger {
    tracks: BTreeMap<u64, FeatureTrack>,
    pairs: Vec<CrossPair>,
    next_id: u64,
    pub capacity: usize,
}

impl AssociationLedger {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, ..Self::default() }
    }

    pub fn tracks(&self) -> impl Iterator<Item = &FeatureTrack> {
        self.tracks.values()
    }

    pub fn track(&self, id: u64) -> Option<&FeatureTrack> {
        self.tracks.get(&id)
    }

    pub fn pairs(&self) -> &[CrossPair] {
        &self.pairs
    }

    pub fn live_pairs(&self) -> impl Iterator<Item = &CrossPair> {
        self.pairs.iter().filter(|p| p.alive)
    }

    fn allocate(&mut self, agent: u8, frame: usize, obs: PixelObs) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.tracks.insert(id, FeatureTrack::new(id, agent, frame, obs));
        id
    }

    /// Appends guidance matches as new paired tracks. Proposals touching a scene point that
    /// already has a live paired track on either agent, or repeating a detection, are rejected.
    pub fn run_guidance<M: Matcher + ?Sized>(&mut self, frame: usize, obs0: &[PixelObs], obs1: &[PixelObs], matcher: &mut M) -> Vec<CrossPair> {
        let mut covered: [HashSet<u64>; 2] = [HashSet::new(), HashSet::new()];
        for p in self.pairs.iter().filter(|p| p.alive) {
            covered[0].insert(self.tracks[&p.track_id_0].landmark);
            covered[1].insert(self.tracks[&p.track_id_1].landmark);
        }
        let mut live = self.pairs.iter().filter(|p| p.alive).count();
        let mut used0 = HashSet::new();
        let mut used1 = HashSet::new();
        let mut added = Vec::new();
        for (i, j) in matcher.propose(obs0, obs1) {
            if live >= self.capacity {
                break;
            }
            let (Some(o0), Some(o1)) = (obs0.get(i), obs1.get(j)) else { continue };
            if !used0.insert(i) || !used1.insert(j) {
                continue;
            }
            if covered[0].contains(&o0.feature_id) || covered[1].contains(&o1.feature_id) {
                continue;
            }
            covered[0].insert(o0.feature_id);
            covered[1].insert(o1.feature_id);
            let t0 = self.allocate(0, frame, *o0);
            let t1 = self.allocate(1, frame, *o1);
            let pair = CrossPair { track_id_0: t0, track_id_1: t1, first_matched_frame: frame, alive: true };
            self.pairs.push(pair);
            added.push(pair);
            live += 1;
        }
        added
    }

    /// Predicts every live track into `frame`, then retires pairs with a dead member.
    pub fn predict<O: FlowOracle + ?Sized>(&mut self, frame: usize, flow: &mut O) {
        predict_tracks(self.tracks.values_mut(), frame, flow);
        self.retire_dead_pairs();
    }

    /// Kills every live track (used when no prediction bridges guidance frames).
    pub fn drop_all(&mut self) {
        for t in self.tracks.values_mut() {
            t.alive = false;
        }
        self.retire_dead_pairs();
    }

    fn retire_dead_pairs(&mut self) {
        for p in self.pairs.iter_mut().filter(|p| p.alive) {
            if !(self.tracks[&p.track_id_0].alive && self.tracks[&p.track_id_1].alive) {
                p.alive = false;
            }
        }
    }

    /// Every live pair's tracks are observed at every frame since it was matched.
    pub fn inheritance_holds(&self, frame: usize) -> bool {
        self.live_pairs().all(|p| {
            self.tracks[&p.track_id_0].covers(p.first_matched_frame, frame)
                && self.tracks[&p.track_id_1].covers(p.first_matched_frame, frame)
        })
    }

    /// Live pairs with fresh observations on both sides at `frame`.
    pub fn associations_at(&self, frame: usize) -> usize {
        self.live_pairs()
            .filter(|p| {
                self.tracks[&p.track_id_0].observation_at(frame).is_some()
                    && self.tracks[&p.track_id_1].observation_at(frame).is_some()
            })
            .count()
    }

    /// No id is held by two tracks and every track id belongs to at most one pair.
    pub fn ids_unique(&self) -> bool {
        let mut seen = HashSet::new();
        self.pairs.iter().all(|p| seen.insert(p.track_id_0) && seen.insert(p.track_id_1))
    }
}

#[derive(Debug, Clone)]
pub struct AssociationRun {
    pub ledger: AssociationLedger,
    /// Leader frame index paired with each processed step.
    pub frames: Vec<usize>,
    /// Live associations per processed step.
    pub associations: Vec<usize>,
    pub inheritance_violations: usize,
    /// Measured association rate over whole guidance cycles, Hz.
    pub measured_rate_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationConfig {
    pub schedule: GuidanceSchedule,
    pub mode: AssociationMode,
    pub dropout: f64,
    pub capacity: usize,
    pub max_frames: usize,
}

impl AssociationConfig {
    pub fn new(frame_rate_hz: f64, mode: AssociationMode) -> Self {
        Self {
            schedule: GuidanceSchedule { frame_rate_hz, guidance_latency_s: DEFAULT_GUIDANCE_LATENCY_S },
            mode,
            dropout: 0.05,
            capacity: DEFAULT_PAIR_CAPACITY,
            max_frames: usize::MAX,
        }
    }
}

/// Runs the ledger over a stream's front-camera observations, pairing leader and follower
/// exposures by timestamp.
pub fn run_association(stream: &SensorStream, cfg: &AssociationConfig) -> AssociationRun {
    let leader_times: Vec<f64> = stream.frames.iter().map(|f| f.time).collect();
    let follower_times: Vec<f64> = stream.frames.iter().map(|f| f.follower_front_time).collect();
    let pairs = pair_nearest_timestamp(&leader_times, &follower_times, DEFAULT_MAX_SKEW);
    let steps: Vec<(usize, usize)> = pairs.iter().map(|p| (p.a_index, p.b_index)).take(cfg.max_frames).collect();

    let lookup_tables: Vec<[BTreeMap<u64, PixelObs>; 2]> = steps
        .iter()
        .map(|&(a, b)| {
            [
                stream.frames[a].leader_front.iter().map(|o| (o.feature_id, *o)).collect(),
                stream.frames[b].follower_front.iter().map(|o| (o.feature_id, *o)).collect(),
            ]
        })
        .collect();
    let mut flow = DropoutFlow::new(cfg.dropout, rng_for(stream.config.rng_seed, "assoc/flow"), |agent: u8, lm: u64, step: usize| {
        lookup_tables.get(step).and_then(|t| t[agent as usize].get(&lm).copied())
    });
    let mut matcher = TruthMatcher;
    let mut ledger = AssociationLedger::new(cfg.capacity);
    let mut associations = Vec::with_capacity(steps.len());
    let mut violations = 0;
    for (step, &(a, b)) in steps.iter().enumerate() {
        match cfg.mode {
            AssociationMode::GuidancePlusPrediction => ledger.predict(step, &mut flow),
            AssociationMode::GuidanceOnly => ledger.drop_all(),
        }
        if cfg.schedule.is_guidance_frame(step) {
            ledger.run_guidance(step, &stream.frames[a].leader_front, &stream.frames[b].follower_front, &mut matcher);
        }
        if !ledger.inheritance_holds(step) {
            violations += 1;
        }
        associations.push(ledger.associations_at(step));
    }
    let period = cfg.schedule.period_frames();
    let whole = associations.len() / period * period;
    let active = associations[..whole].iter().filter(|&&n| n > 0).count();
    let measured_rate_hz = if whole == 0 { 0.0 } else { active as f64 / whole as f64 * cfg.schedule.frame_rate_hz };
    AssociationRun { ledger, frames: steps.iter().map(|s| s.0).collect(), associations, inheritance_violations: violations, measured_rate_hz }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_indexed;
    use rand::SeedableRng;

    fn obs(id: u64) -> PixelObs {
        PixelObs::new(id as f64, 0.0).with_id(id)
    }

    #[test]
    fn schedule_arithmetic() {
        let s = GuidanceSchedule::new(30.0, 0.074).unwrap();
        assert_eq!(s.skip(), 2);
        assert_eq!(association_rate(&s, AssociationMode::GuidanceOnly), 10.0);
        assert_eq!(association_rate(&s, AssociationMode::GuidancePlusPrediction), 30.0);
        let fast = GuidanceSchedule::new(30.0, 0.02).unwrap();
        assert_eq!(fast.skip(), 0);
        assert_eq!(association_rate(&fast, AssociationMode::GuidanceOnly), 30.0);
        assert!(GuidanceSchedule::new(0.0, 0.1).is_err());
    }

    #[test]
    fn guidance_passthrough_and_uniqueness() {
        let mut ledger = AssociationLedger::new(DEFAULT_PAIR_CAPACITY);
        let a: Vec<_> = (0..5).map(obs).collect();
        let b: Vec<_> = (2..8).map(obs).collect();
        let added = ledger.run_guidance(0, &a, &b, &mut TruthMatcher);
        let ids: Vec<u64> = added.iter().map(|p| ledger.track(p.track_id_0).unwrap().landmark).collect();
        assert_eq!(ids, vec![2, 3, 4]);
        assert!(ledger.run_guidance(1, &[], &[], &mut TruthMatcher).is_empty());
        // same scene points again: rejected
        assert!(ledger.run_guidance(2, &a, &b, &mut TruthMatcher).is_empty());
        struct Dup;
        impl Matcher for Dup {
            fn propose(&mut self, _: &[PixelObs], _: &[PixelObs]) -> Vec<(usize, usize)> {
                vec![(0, 0), (0, 1), (1, 0)]
            }
        }
        let mut fresh = AssociationLedger::new(10);
        assert_eq!(fresh.run_guidance(0, &[obs(10), obs(11)], &[obs(10), obs(11)], &mut Dup).len(), 1);
        assert!(ledger.ids_unique() && fresh.ids_unique());
    }

    #[test]
    fn capacity_is_respected() {
        let mut ledger = AssociationLedger::new(3);
        let a: Vec<_> = (0..10).map(obs).collect();
        assert_eq!(ledger.run_guidance(0, &a, &a, &mut TruthMatcher).len(), 3);
    }

    fn population(n: u64) -> Vec<FeatureTrack> {
        (0..n).map(|i| FeatureTrack::new(i, 0, 0, obs(i))).collect()
    }

    fn always(dropout: f64, seed: u64) -> DropoutFlow<impl FnMut(u8, u64, usize) -> Option<PixelObs>> {
        DropoutFlow::new(dropout, ChaCha8Rng::seed_from_u64(seed), |_, id, _| Some(obs(id)))
    }

    #[test]
    fn dropout_extremes() {
        let mut t = population(50);
        let mut flow = always(0.0, 1);
        for f in 1..=20 {
            predict_tracks(t.iter_mut(), f, &mut flow);
        }
        assert!(t.iter().all(|x| x.alive && x.history.len() == 21));
        let mut t = population(50);
        predict_tracks(t.iter_mut(), 1, &mut always(1.0, 1));
        assert!(t.iter().all(|x| !x.alive));
    }

    #[test]
    fn retention_matches_recount_and_is_monotone() {
        let mut t = population(500);
        let mut flow = always(0.1, 3);
        for f in 1..=15 {
            predict_tracks(t.iter_mut(), f, &mut flow);
        }
        let counts = retention_stats(&t, 0, 15);
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        for (h, &c) in counts.iter().enumerate() {
            let recount = t.iter().filter(|x| (0..=h).all(|f| x.history.iter().any(|(fr, _)| *fr == f))).count();
            assert_eq!(c, recount);
        }
        let immortal = population(20);
        assert_eq!(retention_stats(&immortal, 0, 0), vec![20]);
    }

    #[test]
    fn dead_tracks_stay_dead_and_pairs_follow() {
        let mut ledger = AssociationLedger::new(10);
        let a: Vec<_> = (0..4).map(obs).collect();
        ledger.run_guidance(0, &a, &a, &mut TruthMatcher);
        let mut flow = DropoutFlow::new(0.0, rng_indexed(1, "t", 0), |agent: u8, id: u64, _| (agent == 0 || id != 2).then(|| obs(id)));
        ledger.predict(1, &mut flow);
        assert_eq!(ledger.live_pairs().count(), 3);
        ledger.predict(2, &mut flow);
        assert!(ledger.inheritance_holds(2));
        let dead: Vec<_> = ledger.tracks().filter(|t| !t.alive).collect();
        assert_eq!(dead.len(), 1);
        assert_eq!(dead[0].last_frame(), 0);
    }
}
