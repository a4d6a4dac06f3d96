//! Agent personalities and the behaviour state machine.
//!
//! A personality holds, per peer, an attraction gain, a repulsion gain and a
//! periodic intent schedule. The state machine cycles
//! `Idle -> Seek -> Dwell -> Repel -> Idle`: a node seeks the peer it most
//! wants to meet, stops when the peer is in range, stays for a dwell time
//! drawn from the pair's observed encounter durations, then backs away.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::spectrum::{analyze_series, to_periods, PeriodicComponent, SpectrumConfig, SpectrumError};
use crate::trace::{bin_intervals, EncounterTrace, NodeId, TraceError};

#[derive(Debug, Error)]
pub enum PersonalityError {
    #[error("sensors reference {peer}, which has no pair entry in {node}'s personality")]
    UnknownPeer { node: NodeId, peer: NodeId },
    #[error("no sensor observation of target {0}")]
    MissingObservation(NodeId),
    #[error("node {0} is not in the trace")]
    UnknownNode(NodeId),
    #[error("invalid personality for {node}: {reason}")]
    Invalid { node: NodeId, reason: String },
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Empirical distribution of dwell times in seconds; sampling is uniform
/// over the stored observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DwellSampler(Vec<f64>);

impl DwellSampler {
    pub fn new(samples: Vec<f64>) -> Result<Self, String> {
        if samples.is_empty() {
            return Err("dwell sampler needs at least one sample".into());
        }
        if let Some(s) = samples.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(format!("dwell sample {s} is not a positive duration"));
        }
        Ok(DwellSampler(samples))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.0[rng.gen_range(0..self.0.len())]
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DwellSampler {
    type Error = String;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        DwellSampler::new(v)
    }
}

impl From<DwellSampler> for Vec<f64> {
    fn from(d: DwellSampler) -> Self {
        d.0
    }
}

/// How one node behaves toward one peer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPersonality {
    pub attract_gain: f64,
    pub repulse_gain: f64,
    pub intent_threshold: f64,
    #[serde(rename = "refractory_s")]
    pub refractory: f64,
    pub components: Vec<PeriodicComponent>,
    #[serde(rename = "dwell_samples_s")]
    pub dwell: DwellSampler,
}

impl PairPersonality {
    /// Superposition of the periodic components at time `t`.
    pub fn intent(&self, t: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.magnitude * (2.0 * PI * t / c.period + c.phase).cos())
            .sum()
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.intent(t) >= self.intent_threshold
    }

    fn validate(&self) -> Result<(), String> {
        let finite_non_neg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_non_neg(self.attract_gain) || !finite_non_neg(self.repulse_gain) {
            return Err("gains must be finite and non-negative".into());
        }
        if !finite_non_neg(self.refractory) {
            return Err("refractory must be non-negative".into());
        }
        if !self.intent_threshold.is_finite() {
            return Err("intent threshold must be finite".into());
        }
        if let Some(c) = self
            .components
            .iter()
            .find(|c| !(c.period.is_finite() && c.period > 0.0))
        {
            return Err(format!("component period {} must be positive", c.period));
        }
        Ok(())
    }
}

/// Free-function form of [`PairPersonality::intent`].
pub fn intent(pp: &PairPersonality, t: f64) -> f64 {
    pp.intent(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Personality {
    pub node: NodeId,
    pub drag: f64,
    pub pairs: BTreeMap<NodeId, PairPersonality>,
}

impl Personality {
    pub fn new(node: NodeId, drag: f64) -> Self {
        Personality {
            node,
            drag,
            pairs: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), PersonalityError> {
        let invalid = |reason: String| PersonalityError::Invalid {
            node: self.node.clone(),
            reason,
        };
        if !(self.drag.is_finite() && self.drag >= 0.0) {
            return Err(invalid(format!("drag {} must be finite and non-negative", self.drag)));
        }
        if self.pairs.contains_key(&self.node) {
            return Err(invalid("personality has an entry for the node itself".into()));
        }
        for (peer, pp) in &self.pairs {
            pp.validate().map_err(|r| invalid(format!("peer {peer}: {r}")))?;
        }
        Ok(())
    }

    fn pair(&self, peer: &NodeId) -> Result<&PairPersonality, PersonalityError> {
        self.pairs.get(peer).ok_or_else(|| PersonalityError::UnknownPeer {
            node: self.node.clone(),
            peer: peer.clone(),
        })
    }
}

/// Behavioural mode of an agent. At most one peer is engaged at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BehaviorState {
    #[default]
    Idle,
    Seek {
        target: NodeId,
    },
    /// `duration` is drawn once on entry.
    Dwell {
        target: NodeId,
        since: f64,
        duration: f64,
    },
    Repel {
        target: NodeId,
        until: f64,
    },
}

impl BehaviorState {
    pub fn target(&self) -> Option<&NodeId> {
        match self {
            BehaviorState::Idle => None,
            BehaviorState::Seek { target }
            | BehaviorState::Dwell { target, .. }
            | BehaviorState::Repel { target, .. } => Some(target),
        }
    }
}

impl fmt::Display for BehaviorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehaviorState::Idle => f.write_str("idle"),
            BehaviorState::Seek { target } => write!(f, "seek:{target}"),
            BehaviorState::Dwell { target, .. } => write!(f, "dwell:{target}"),
            BehaviorState::Repel { target, .. } => write!(f, "repel:{target}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MotionCommand {
    Drive { speed: f64, heading_rate: f64 },
    Stop,
}

/// Range and bearing of a peer as seen by the robot. `bearing` is relative to
/// the robot's heading, in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeerObservation {
    pub distance: f64,
    pub bearing: f64,
}

/// What the personality interface receives from the robot each tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorReading {
    /// Keyed by the node's personality peers; true iff the peer is in range.
    pub virtual_wall: BTreeMap<NodeId, bool>,
    pub bump: bool,
    /// Every node in range, personality peer or not.
    pub in_range: BTreeSet<NodeId>,
    pub peers: BTreeMap<NodeId, PeerObservation>,
}

/// Actuation limits used to size motion commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLimits {
    pub v_max: f64,
    pub dt: f64,
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Speed produced by a gain after drag, capped at `v_max`.
pub fn drag_limited_speed(gain: f64, drag: f64, v_max: f64) -> f64 {
    (gain / (1.0 + drag)).min(v_max)
}

fn drive(
    personality: &Personality,
    sensors: &SensorReading,
    target: &NodeId,
    gain: f64,
    away: bool,
    limits: &ControlLimits,
) -> Result<MotionCommand, PersonalityError> {
    let obs = sensors
        .peers
        .get(target)
        .ok_or_else(|| PersonalityError::MissingObservation(target.clone()))?;
    let bearing = if away {
        wrap_angle(obs.bearing + PI)
    } else {
        obs.bearing
    };
    Ok(MotionCommand::Drive {
        speed: drag_limited_speed(gain, personality.drag, limits.v_max),
        heading_rate: bearing / limits.dt,
    })
}

/// Peer with the highest active intent at `t`; ties go to the smaller id.
fn most_wanted(personality: &Personality, t: f64) -> Option<&NodeId> {
    let mut best: Option<(&NodeId, f64)> = None;
    for (peer, pp) in &personality.pairs {
        let v = pp.intent(t);
        if v < pp.intent_threshold {
            continue;
        }
        // BTreeMap iterates in id order, so strict > keeps the smaller id on ties
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((peer, v));
        }
    }
    best.map(|(p, _)| p)
}

/// One control step of the personality interface.
///
/// Draws from `rng` only when entering `Dwell`.
pub fn step_state<R: Rng + ?Sized>(
    state: &BehaviorState,
    sensors: &SensorReading,
    personality: &Personality,
    t: f64,
    limits: &ControlLimits,
    rng: &mut R,
) -> Result<(BehaviorState, MotionCommand), PersonalityError> {
    if let Some(peer) = sensors
        .virtual_wall
        .keys()
        .find(|p| !personality.pairs.contains_key(*p))
    {
        return Err(PersonalityError::UnknownPeer {
            node: personality.node.clone(),
            peer: peer.clone(),
        });
    }
    let walled = |p: &NodeId| sensors.virtual_wall.get(p).copied().unwrap_or(false);

    let seek = |target: &NodeId| -> Result<(BehaviorState, MotionCommand), PersonalityError> {
        let pp = personality.pair(target)?;
        let cmd = drive(personality, sensors, target, pp.attract_gain, false, limits)?;
        Ok((BehaviorState::Seek { target: target.clone() }, cmd))
    };

    match state {
        BehaviorState::Idle => match most_wanted(personality, t) {
            Some(target) => seek(target),
            None => Ok((BehaviorState::Idle, MotionCommand::Stop)),
        },
        BehaviorState::Seek { target } => {
            let pp = personality.pair(target)?;
            if walled(target) {
                let duration = pp.dwell.sample(rng);
                Ok((
                    BehaviorState::Dwell {
                        target: target.clone(),
                        since: t,
                        duration,
                    },
                    MotionCommand::Stop,
                ))
            } else {
                seek(target)
            }
        }
        BehaviorState::Dwell {
            target,
            since,
            duration,
        } => {
            let pp = personality.pair(target)?;
            if t - since >= *duration {
                let cmd = drive(personality, sensors, target, pp.repulse_gain, true, limits)?;
                Ok((
                    BehaviorState::Repel {
                        target: target.clone(),
                        until: t + pp.refractory,
                    },
                    cmd,
                ))
            } else if !walled(target) {
                seek(target)
            } else {
                Ok((state.clone(), MotionCommand::Stop))
            }
        }
        BehaviorState::Repel { target, until } => {
            let pp = personality.pair(target)?;
            if t >= *until {
                Ok((BehaviorState::Idle, MotionCommand::Stop))
            } else {
                let cmd = drive(personality, sensors, target, pp.repulse_gain, true, limits)?;
                Ok((state.clone(), cmd))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub spectrum: SpectrumConfig,
    /// Number of periodic components kept per pair.
    pub top_m: usize,
    pub default_drag: f64,
    pub intent_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            spectrum: SpectrumConfig::default(),
            top_m: 2,
            default_drag: 0.0,
            intent_threshold: 0.0,
        }
    }
}

/// Builds a node's personality from an encounter trace.
///
/// Per peer met at least once: the top periodic components of the pair's
/// series, the pair's encounter durations as dwell samples, and an
/// attraction gain proportional to the pair's encounter count (the busiest
/// pair gets 1). Repulsion mirrors attraction; refractory is the mean dwell.
pub fn fit_personality(
    trace: &EncounterTrace,
    node: &NodeId,
    cfg: &FitConfig,
) -> Result<Personality, PersonalityError> {
    if !trace.nodes().contains(node) {
        return Err(PersonalityError::UnknownNode(node.clone()));
    }
    let mut per_peer: BTreeMap<NodeId, Vec<(u64, u64)>> = BTreeMap::new();
    for r in trace.records() {
        let peer = if &r.a == node {
            &r.b
        } else if &r.b == node {
            &r.a
        } else {
            continue;
        };
        per_peer.entry(peer.clone()).or_default().push((r.start, r.end));
    }
    let max_count = per_peer.values().map(Vec::len).max().unwrap_or(0) as f64;

    let mut personality = Personality::new(node.clone(), cfg.default_drag);
    for (peer, intervals) in per_peer {
        let components = pair_components(&intervals, trace.horizon(), cfg)?;
        let dwell = DwellSampler::new(intervals.iter().map(|&(s, e)| (e - s) as f64).collect())
            .expect("encounters have positive length");
        let gain = intervals.len() as f64 / max_count;
        personality.pairs.insert(
            peer,
            PairPersonality {
                attract_gain: gain,
                repulse_gain: gain,
                intent_threshold: cfg.intent_threshold,
                refractory: dwell.mean(),
                components,
                dwell,
            },
        );
    }
    Ok(personality)
}

fn pair_components(
    intervals: &[(u64, u64)],
    horizon: u64,
    cfg: &FitConfig,
) -> Result<Vec<PeriodicComponent>, PersonalityError> {
    let series = match bin_intervals(intervals, horizon, cfg.spectrum.bin_width, cfg.spectrum.mode) {
        Ok(s) => s,
        Err(TraceError::EmptyHorizon) => return Ok(Vec::new()),
        Err(e) => return Err(SpectrumError::from(e).into()),
    };
    if series.len() < 2 {
        return Ok(Vec::new());
    }
    let (spec, mut peaks) = analyze_series(&series, &cfg.spectrum.policy)?;
    peaks.peaks.truncate(cfg.top_m);
    Ok(to_periods(&peaks, spec.n, spec.bin_width)?)
}

/// Fits every node of the trace.
pub fn fit_all(trace: &EncounterTrace, cfg: &FitConfig, exec: Execution) -> Result<Vec<Personality>, PersonalityError> {
    let nodes: Vec<NodeId> = trace.nodes().iter().cloned().collect();
    exec.map(&nodes, |n| fit_personality(trace, n, cfg))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::EncounterRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    fn comp(period: f64, magnitude: f64, phase: f64) -> PeriodicComponent {
        PeriodicComponent {
            period,
            magnitude,
            phase,
        }
    }

    fn pair(components: Vec<PeriodicComponent>, dwell: Vec<f64>) -> PairPersonality {
        PairPersonality {
            attract_gain: 1.0,
            repulse_gain: 1.0,
            intent_threshold: 0.0,
            refractory: 30.0,
            components,
            dwell: DwellSampler::new(dwell).unwrap(),
        }
    }

    fn personality(node: &str, peers: &[(&str, PairPersonality)]) -> Personality {
        let mut p = Personality::new(id(node), 0.0);
        for (peer, pp) in peers {
            p.pairs.insert(id(peer), pp.clone());
        }
        p
    }

    fn sensors(walls: &[(&str, bool)]) -> SensorReading {
        let mut s = SensorReading::default();
        for (i, (peer, w)) in walls.iter().enumerate() {
            s.virtual_wall.insert(id(peer), *w);
            s.peers.insert(
                id(peer),
                PeerObservation {
                    distance: if *w { 5.0 } else { 50.0 },
                    bearing: 0.25 * (i as f64 + 1.0),
                },
            );
            if *w {
                s.in_range.insert(id(peer));
            }
        }
        s
    }

    const LIMITS: ControlLimits = ControlLimits { v_max: 0.5, dt: 1.0 };

    #[test]
    fn intent_examples() {
        let one = pair(vec![comp(600.0, 1.0, 0.0)], vec![60.0]);
        assert!((intent(&one, 0.0) - 1.0).abs() < 1e-12);
        assert!((intent(&one, 300.0) + 1.0).abs() < 1e-12);
        let two = pair(vec![comp(600.0, 1.0, 0.0), comp(2100.0, 0.5, 0.0)], vec![60.0]);
        assert!((intent(&two, 0.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn intent_repeats_over_common_period() {
        // lcm(600, 2100) = 4200
        let pp = pair(vec![comp(600.0, 1.0, 0.3), comp(2100.0, 0.5, -1.2)], vec![60.0]);
        for t in [0.0, 17.0, 333.3, 1999.0, 4100.5] {
            assert!((pp.intent(t) - pp.intent(t + 4200.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn idle_to_seek_drives_toward_target() {
        let p = personality("A", &[("B", pair(vec![comp(600.0, 1.0, 0.0)], vec![60.0]))]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, cmd) = step_state(
            &BehaviorState::Idle,
            &sensors(&[("B", false)]),
            &p,
            0.0,
            &LIMITS,
            &mut rng,
        )
        .unwrap();
        assert_eq!(s, BehaviorState::Seek { target: id("B") });
        assert_eq!(
            cmd,
            MotionCommand::Drive {
                speed: 0.5,
                heading_rate: 0.25
            }
        );
        // intent cos(pi) = -1 < 0: stays idle
        let (s, cmd) = step_state(
            &BehaviorState::Idle,
            &sensors(&[("B", false)]),
            &p,
            300.0,
            &LIMITS,
            &mut rng,
        )
        .unwrap();
        assert_eq!((s, cmd), (BehaviorState::Idle, MotionCommand::Stop));
    }

    #[test]
    fn highest_intent_wins_ties_by_id() {
        let strong = pair(vec![comp(600.0, 1.0, 0.0)], vec![60.0]);
        let weak = pair(vec![comp(600.0, 0.5, 0.0)], vec![60.0]);
        let p = personality("A", &[("B", weak.clone()), ("C", strong.clone())]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sensors(&[("B", false), ("C", false)]);
        let (st, _) = step_state(&BehaviorState::Idle, &s, &p, 0.0, &LIMITS, &mut rng).unwrap();
        assert_eq!(st, BehaviorState::Seek { target: id("C") });
        let p = personality("A", &[("C", strong.clone()), ("B", strong)]);
        let (st, _) = step_state(&BehaviorState::Idle, &s, &p, 0.0, &LIMITS, &mut rng).unwrap();
        assert_eq!(st, BehaviorState::Seek { target: id("B") });
    }

    #[test]
    fn seek_dwell_repel_idle_cycle() {
        let p = personality("A", &[("B", pair(vec![comp(600.0, 1.0, 0.0)], vec![60.0]))]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seek = BehaviorState::Seek { target: id("B") };

        let (dwell, cmd) = step_state(&seek, &sensors(&[("B", true)]), &p, 10.0, &LIMITS, &mut rng).unwrap();
        assert_eq!(
            dwell,
            BehaviorState::Dwell {
                target: id("B"),
                since: 10.0,
                duration: 60.0
            }
        );
        assert_eq!(cmd, MotionCommand::Stop);

        let (same, cmd) = step_state(&dwell, &sensors(&[("B", true)]), &p, 69.0, &LIMITS, &mut rng).unwrap();
        assert_eq!((&same, cmd), (&dwell, MotionCommand::Stop));

        // target wandered off before the dwell elapsed
        let (back, _) = step_state(&dwell, &sensors(&[("B", false)]), &p, 40.0, &LIMITS, &mut rng).unwrap();
        assert_eq!(back, seek);

        let (repel, cmd) = step_state(&dwell, &sensors(&[("B", true)]), &p, 70.0, &LIMITS, &mut rng).unwrap();
        assert_eq!(
            repel,
            BehaviorState::Repel {
                target: id("B"),
                until: 100.0
            }
        );
        match cmd {
            MotionCommand::Drive { speed, heading_rate } => {
                assert_eq!(speed, 0.5);
                assert!((heading_rate - wrap_angle(0.25 + PI)).abs() < 1e-12);
            }
            MotionCommand::Stop => panic!("repel must drive"),
        }

        let (still, _) = step_state(&repel, &sensors(&[("B", false)]), &p, 99.0, &LIMITS, &mut rng).unwrap();
        assert_eq!(still, repel);
        let (idle, cmd) = step_state(&repel, &sensors(&[("B", false)]), &p, 100.0, &LIMITS, &mut rng).unwrap();
        assert_eq!((idle, cmd), (BehaviorState::Idle, MotionCommand::Stop));
    }

    #[test]
    fn unknown_peer_in_sensors() {
        let p = personality("A", &[("B", pair(vec![], vec![60.0]))]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = step_state(
            &BehaviorState::Idle,
            &sensors(&[("Z", true)]),
            &p,
            0.0,
            &LIMITS,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, PersonalityError::UnknownPeer { .. }));
    }

    #[test]
    fn drag_scales_speed() {
        let mut p = personality("A", &[("B", pair(vec![comp(600.0, 1.0, 0.0)], vec![60.0]))]);
        p.pairs.get_mut(&id("B")).unwrap().attract_gain = 0.4;
        p.drag = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cmd) = step_state(
            &BehaviorState::Idle,
            &sensors(&[("B", false)]),
            &p,
            0.0,
            &LIMITS,
            &mut rng,
        )
        .unwrap();
        assert!(matches!(cmd, MotionCommand::Drive { speed, .. } if (speed - 0.2).abs() < 1e-12));
    }

    #[test]
    fn replay_is_deterministic() {
        let p = personality(
            "A",
            &[("B", pair(vec![comp(600.0, 1.0, 0.0)], vec![10.0, 20.0, 30.0, 40.0]))],
        );
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut st = BehaviorState::Idle;
            let mut log = Vec::new();
            for t in 0..2000 {
                let near = (t / 37) % 2 == 0;
                let (next, cmd) = step_state(&st, &sensors(&[("B", near)]), &p, t as f64, &LIMITS, &mut rng).unwrap();
                // single-target discipline: the only peer ever engaged is B
                assert!(next.target().map_or(true, |x| x == &id("B")));
                log.push((next.clone(), cmd));
                st = next;
            }
            log
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn dwell_sampler_frequencies() {
        let d = DwellSampler::new(vec![60.0, 60.0, 120.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let sixty = (0..draws).filter(|_| d.sample(&mut rng) == 60.0).count();
        let frac = sixty as f64 / draws as f64;
        assert!((frac - 2.0 / 3.0).abs() <= 0.03, "{frac}");
        assert!(DwellSampler::new(vec![]).is_err());
        assert!(DwellSampler::new(vec![0.0]).is_err());
    }

    fn day_trace(days: u64, on: impl Fn(u64) -> bool) -> EncounterTrace {
        let recs = (0..days)
            .filter(|&d| on(d))
            .map(|d| EncounterRecord::new(id("A"), id("B"), d * 86_400 + 3_600, d * 86_400 + 7_200).unwrap());
        EncounterTrace::new(recs, [id("A"), id("B"), id("C")], days * 86_400)
    }

    #[test]
    fn fit_weekly_pair() {
        // three consecutive days a week; top peak is the fundamental k=18
        let trace = day_trace(128, |d| d % 7 < 3);
        let cfg = FitConfig {
            top_m: 1,
            ..FitConfig::default()
        };
        let p = fit_personality(&trace, &id("A"), &cfg).unwrap();
        let pp = &p.pairs[&id("B")];
        assert_eq!(pp.components.len(), 1);
        assert!((pp.components[0].period / 86_400.0 - 128.0 / 18.0).abs() < 1e-9);
        assert_eq!(pp.components[0].magnitude, 1.0);
        assert_eq!(pp.attract_gain, 1.0);
        assert_eq!(pp.repulse_gain, pp.attract_gain);
        assert_eq!(pp.refractory, 3_600.0);
        assert_eq!(pp.intent_threshold, 0.0);
    }

    #[test]
    fn fit_vacuous_and_unknown() {
        let trace = day_trace(10, |d| d == 1);
        let p = fit_personality(&trace, &id("C"), &FitConfig::default()).unwrap();
        assert!(p.pairs.is_empty());
        assert_eq!(p.drag, 0.0);
        assert!(matches!(
            fit_personality(&trace, &id("Q"), &FitConfig::default()),
            Err(PersonalityError::UnknownNode(_))
        ));
    }

    #[test]
    fn fit_normalizes_gains() {
        let recs = [
            EncounterRecord::new(id("A"), id("B"), 0, 60).unwrap(),
            EncounterRecord::new(id("A"), id("B"), 100, 160).unwrap(),
            EncounterRecord::new(id("A"), id("B"), 200, 320).unwrap(),
            EncounterRecord::new(id("A"), id("C"), 500, 560).unwrap(),
        ];
        let trace = EncounterTrace::new(recs, [], 0);
        let cfg = FitConfig {
            spectrum: SpectrumConfig::new(60),
            ..FitConfig::default()
        };
        let p = fit_personality(&trace, &id("A"), &cfg).unwrap();
        assert_eq!(p.pairs[&id("B")].attract_gain, 1.0);
        assert!((p.pairs[&id("C")].attract_gain - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.pairs[&id("B")].dwell.samples(), &[60.0, 60.0, 120.0]);
        let all = fit_all(&trace, &cfg, Execution::Parallel).unwrap();
        assert_eq!(all, fit_all(&trace, &cfg, Execution::Sequential).unwrap());
        for q in &all {
            q.validate().unwrap();
            if !q.pairs.is_empty() {
                let max = q.pairs.values().map(|pp| pp.attract_gain).fold(0.0, f64::max);
                assert_eq!(max, 1.0);
            }
        }
    }

    #[test]
    fn json_schema_field_names() {
        let p = personality("A", &[("B", pair(vec![comp(600.0, 1.0, 0.0)], vec![60.0]))]);
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        let pb = &v["pairs"]["B"];
        for key in [
            "attract_gain",
            "repulse_gain",
            "intent_threshold",
            "refractory_s",
            "components",
            "dwell_samples_s",
        ] {
            assert!(pb.get(key).is_some(), "{key}");
        }
        assert_eq!(pb["components"][0]["period_s"], 600.0);
        assert_eq!(v["node"], "A");
        let back: Personality = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
