//! The 2-D world: forces, robot kinematics, encounter detection and
//! plausible-mobility inference from a contact trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::personality::{
    drag_limited_speed, step_state, wrap_angle, BehaviorState, ControlLimits, MotionCommand, PeerObservation,
    Personality, PersonalityError, SensorReading,
};
use crate::rng;
use crate::trace::{EncounterRecord, EncounterTrace, NodeId};

#[derive(Debug, Error)]
pub enum MobilityError {
    #[error("invalid arena: {0}")]
    InvalidArena(String),
    #[error("commanded speed {speed} exceeds v_max {v_max}")]
    SpeedLimit { speed: f64, v_max: f64 },
    #[error("dt must be positive, got {0}")]
    InvalidStep(f64),
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("{node}'s personality refers to {peer}, which is not in the world")]
    UnknownPeer { node: NodeId, peer: NodeId },
    #[error("node {node} starts outside the arena at ({x}, {y})")]
    OutsideArena { node: NodeId, x: f64, y: f64 },
    #[error("encounter trace is empty")]
    EmptyTrace,
    #[error("invalid inference config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Personality(#[from] PersonalityError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (o - self).norm()
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    /// Unit vector, or zero for the zero vector.
    pub fn unit(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n)
        } else {
            Vec2::ZERO
        }
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

/// Rectangular world with a disk communication range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
    pub range: f64,
    pub v_max: f64,
    pub dt: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Arena {
            width: 100.0,
            height: 100.0,
            range: 10.0,
            v_max: 0.5,
            dt: 1.0,
        }
    }
}

impl Arena {
    pub fn validate(&self) -> Result<(), MobilityError> {
        let fields = [
            ("width", self.width),
            ("height", self.height),
            ("range", self.range),
            ("v_max", self.v_max),
            ("dt", self.dt),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(MobilityError::InvalidArena(format!("{name} must be positive, got {v}")));
            }
        }
        if self.range >= self.width.min(self.height) / 2.0 {
            return Err(MobilityError::InvalidArena(format!(
                "range {} must be below half the smaller side",
                self.range
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn limits(&self) -> ControlLimits {
        ControlLimits {
            v_max: self.v_max,
            dt: self.dt,
        }
    }

    fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub pos: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub behavior: BehaviorState,
}

impl NodeState {
    pub fn at(pos: Vec2) -> Self {
        NodeState {
            pos,
            heading: 0.0,
            speed: 0.0,
            behavior: BehaviorState::Idle,
        }
    }
}

/// Force on node `i`: attraction toward a sought peer, repulsion away from a
/// repelled one, nothing while idle or dwelling. Coincident positions give a
/// zero contribution.
pub fn compute_force(
    i: &NodeId,
    states: &BTreeMap<NodeId, NodeState>,
    personalities: &BTreeMap<NodeId, Personality>,
    _t: f64,
) -> Vec2 {
    let (Some(state), Some(personality)) = (states.get(i), personalities.get(i)) else {
        return Vec2::ZERO;
    };
    force_on(state, personality, |j| states.get(j).map(|s| s.pos))
}

fn force_on(state: &NodeState, personality: &Personality, pos_of: impl Fn(&NodeId) -> Option<Vec2>) -> Vec2 {
    let (target, sign, gain_of): (_, f64, fn(&crate::personality::PairPersonality) -> f64) = match &state.behavior {
        BehaviorState::Seek { target } => (target, 1.0, |pp| pp.attract_gain),
        BehaviorState::Repel { target, .. } => (target, -1.0, |pp| pp.repulse_gain),
        BehaviorState::Idle | BehaviorState::Dwell { .. } => return Vec2::ZERO,
    };
    match (personality.pairs.get(target), pos_of(target)) {
        (Some(pp), Some(p)) => (p - state.pos).unit().scale(sign * gain_of(pp)),
        _ => Vec2::ZERO,
    }
}

/// `F / (1 + drag)`, with its magnitude capped at `v_max`.
pub fn commanded_velocity(force: Vec2, drag: f64, v_max: f64) -> Vec2 {
    let n = force.norm();
    if n == 0.0 {
        return Vec2::ZERO;
    }
    force.scale(drag_limited_speed(n, drag, v_max) / n)
}

/// Differential-drive update: turn first, then translate along the new
/// heading.
pub fn robot_execute(cmd: MotionCommand, s: &NodeState, dt: f64, v_max: f64) -> Result<NodeState, MobilityError> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(MobilityError::InvalidStep(dt));
    }
    let mut next = s.clone();
    match cmd {
        MotionCommand::Stop => next.speed = 0.0,
        MotionCommand::Drive { speed, heading_rate } => {
            if speed > v_max {
                return Err(MobilityError::SpeedLimit { speed, v_max });
            }
            next.heading = wrap_angle(s.heading + heading_rate * dt);
            next.pos += Vec2::new(next.heading.cos(), next.heading.sin()).scale(speed * dt);
            next.speed = speed;
        }
    }
    Ok(next)
}

/// Mirrors a position that left the arena back inside and flips the
/// matching velocity component.
pub fn reflect(pos: Vec2, vel: Vec2, arena: &Arena) -> (Vec2, Vec2) {
    let (mut p, mut v) = (pos, vel);
    if p.x < 0.0 {
        p.x = -p.x;
        v.x = -v.x;
    } else if p.x > arena.width {
        p.x = 2.0 * arena.width - p.x;
        v.x = -v.x;
    }
    if p.y < 0.0 {
        p.y = -p.y;
        v.y = -v.y;
    } else if p.y > arena.height {
        p.y = 2.0 * arena.height - p.y;
        v.y = -v.y;
    }
    (arena.clamp(p), v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncounterKind {
    Start,
    End,
}

impl fmt::Display for EncounterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncounterKind::Start => "start",
            EncounterKind::End => "end",
        })
    }
}

/// Edge-triggered change of a pair's contact status; `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterEvent {
    pub kind: EncounterKind,
    pub a: NodeId,
    pub b: NodeId,
    pub t: f64,
}

pub const ENCOUNTER_EVENT_HEADER: [&str; 4] = ["type", "node_a", "node_b", "t_s"];
pub const POSITION_HEADER: [&str; 6] = ["tick", "node", "x", "y", "heading", "state"];

pub fn write_encounter_events<W: Write>(events: &[EncounterEvent], out: W) -> Result<(), MobilityError> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    let io = |e: csv::Error| MobilityError::Io(e.into());
    w.write_record(ENCOUNTER_EVENT_HEADER).map_err(io)?;
    for e in events {
        w.write_record([e.kind.to_string(), e.a.to_string(), e.b.to_string(), e.t.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Closes encounter events into trace records. Contacts still open at
/// `horizon` end there; times are rounded to whole seconds and intervals
/// that round to zero length are dropped.
pub fn events_to_trace(
    events: &[EncounterEvent],
    nodes: impl IntoIterator<Item = NodeId>,
    horizon: f64,
) -> EncounterTrace {
    let mut open: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    let mut records = Vec::new();
    let mut close = |a: NodeId, b: NodeId, s: f64, e: f64| {
        let (s, e) = (s.round() as u64, e.round() as u64);
        if let Ok(r) = EncounterRecord::new(a, b, s, e) {
            records.push(r);
        }
    };
    for ev in events {
        let key = (ev.a.clone(), ev.b.clone());
        match ev.kind {
            EncounterKind::Start => {
                open.entry(key).or_insert(ev.t);
            }
            EncounterKind::End => {
                if let Some(s) = open.remove(&key) {
                    close(key.0, key.1, s, ev.t);
                }
            }
        }
    }
    for ((a, b), s) in open {
        close(a, b, s, horizon);
    }
    EncounterTrace::new(records, nodes, horizon.round() as u64)
}

/// One row of the position log (`tick,node,x,y,heading,state`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub tick: u64,
    pub node: NodeId,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub state: String,
}

pub fn write_position_rows<W: Write>(rows: &[PositionRow], out: W) -> Result<(), MobilityError> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    let io = |e: csv::Error| MobilityError::Io(e.into());
    w.write_record(POSITION_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.tick.to_string(),
            r.node.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.heading.to_string(),
            r.state.clone(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Initial description of one robot.
#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub personality: Personality,
    pub pos: Vec2,
    pub heading: f64,
}

#[derive(Debug, Clone)]
struct Agent {
    id: NodeId,
    state: NodeState,
    personality: Personality,
    rng: ChaCha8Rng,
    command: MotionCommand,
}

/// All robots plus contact bookkeeping. Owned by a single run.
#[derive(Debug, Clone)]
pub struct World {
    arena: Arena,
    agents: Vec<Agent>,
    index: BTreeMap<NodeId, usize>,
    contacts: BTreeSet<(usize, usize)>,
    tick: u64,
    exec: Execution,
}

struct TickInput<'a> {
    arena: &'a Arena,
    positions: &'a [Vec2],
    ids: &'a [NodeId],
    index: &'a BTreeMap<NodeId, usize>,
    t: f64,
}

impl World {
    /// Builds a world. Each agent draws from its own stream derived from
    /// `seed` and its id.
    pub fn new(arena: Arena, agents: Vec<AgentSpec>, seed: u64, exec: Execution) -> Result<Self, MobilityError> {
        arena.validate()?;
        let mut agents: Vec<Agent> = agents
            .into_iter()
            .map(|a| Agent {
                id: a.personality.node.clone(),
                rng: rng::stream(seed, &format!("behavior:{}", a.personality.node)),
                state: NodeState {
                    pos: a.pos,
                    heading: a.heading,
                    speed: 0.0,
                    behavior: BehaviorState::Idle,
                },
                personality: a.personality,
                command: MotionCommand::Stop,
            })
            .collect();
        agents.sort_by(|x, y| x.id.cmp(&y.id));
        let mut index = BTreeMap::new();
        for (i, a) in agents.iter().enumerate() {
            if index.insert(a.id.clone(), i).is_some() {
                return Err(MobilityError::DuplicateNode(a.id.clone()));
            }
            if !arena.contains(a.state.pos) {
                return Err(MobilityError::OutsideArena {
                    node: a.id.clone(),
                    x: a.state.pos.x,
                    y: a.state.pos.y,
                });
            }
            a.personality.validate()?;
        }
        for a in &agents {
            if let Some(peer) = a.personality.pairs.keys().find(|p| !index.contains_key(*p)) {
                return Err(MobilityError::UnknownPeer {
                    node: a.id.clone(),
                    peer: peer.clone(),
                });
            }
        }
        Ok(World {
            arena,
            agents,
            index,
            contacts: BTreeSet::new(),
            tick: 0,
            exec,
        })
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.arena.dt
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.agents.iter().map(|a| a.id.clone()).collect()
    }

    pub fn states(&self) -> BTreeMap<NodeId, NodeState> {
        self.agents.iter().map(|a| (a.id.clone(), a.state.clone())).collect()
    }

    pub fn state(&self, id: &NodeId) -> Option<&NodeState> {
        self.index.get(id).map(|&i| &self.agents[i].state)
    }

    pub fn personalities(&self) -> BTreeMap<NodeId, Personality> {
        self.agents
            .iter()
            .map(|a| (a.id.clone(), a.personality.clone()))
            .collect()
    }

    /// Commands issued by the personality state machine on the last step.
    pub fn last_commands(&self) -> BTreeMap<NodeId, MotionCommand> {
        self.agents.iter().map(|a| (a.id.clone(), a.command)).collect()
    }

    /// Current state of every node as position-log rows.
    pub fn position_rows(&self) -> Vec<PositionRow> {
        self.agents
            .iter()
            .map(|a| PositionRow {
                tick: self.tick,
                node: a.id.clone(),
                x: a.state.pos.x,
                y: a.state.pos.y,
                heading: a.state.heading,
                state: a.state.behavior.to_string(),
            })
            .collect()
    }

    /// Sensor reading for one node at the given positions.
    pub fn sensors_for(&self, id: &NodeId) -> Option<SensorReading> {
        let positions: Vec<Vec2> = self.agents.iter().map(|a| a.state.pos).collect();
        let ids: Vec<NodeId> = self.node_ids();
        let input = TickInput {
            arena: &self.arena,
            positions: &positions,
            ids: &ids,
            index: &self.index,
            t: self.time(),
        };
        self.index.get(id).map(|&i| sense(&input, i, &self.agents[i]))
    }

    /// Advances one tick and returns the contact changes observed at the
    /// start of the tick.
    pub fn step(&mut self) -> Result<Vec<EncounterEvent>, MobilityError> {
        let t = self.time();
        let positions: Vec<Vec2> = self.agents.iter().map(|a| a.state.pos).collect();
        let ids: Vec<NodeId> = self.node_ids();
        let events = self.detect_encounters(&positions, &ids, t);

        let input = TickInput {
            arena: &self.arena,
            positions: &positions,
            ids: &ids,
            index: &self.index,
            t,
        };
        let results = self
            .exec
            .map_mut(&mut self.agents, |agent| advance_agent(&input, agent));
        results.into_iter().collect::<Result<Vec<()>, _>>()?;
        self.tick += 1;
        Ok(events)
    }

    fn detect_encounters(&mut self, positions: &[Vec2], ids: &[NodeId], t: f64) -> Vec<EncounterEvent> {
        let mut events = Vec::new();
        let n = positions.len();
        for i in 0..n {
            for j in i + 1..n {
                let near = positions[i].dist(positions[j]) <= self.arena.range;
                let was = self.contacts.contains(&(i, j));
                let kind = match (was, near) {
                    (false, true) => {
                        self.contacts.insert((i, j));
                        EncounterKind::Start
                    }
                    (true, false) => {
                        self.contacts.remove(&(i, j));
                        EncounterKind::End
                    }
                    _ => continue,
                };
                events.push(EncounterEvent {
                    kind,
                    a: ids[i].clone(),
                    b: ids[j].clone(),
                    t,
                });
            }
        }
        events
    }
}

fn sense(input: &TickInput<'_>, i: usize, agent: &Agent) -> SensorReading {
    let me = input.positions[i];
    let mut reading = SensorReading {
        bump: me.x <= 0.0 || me.y <= 0.0 || me.x >= input.arena.width || me.y >= input.arena.height,
        ..SensorReading::default()
    };
    for (j, &p) in input.positions.iter().enumerate() {
        if j != i && me.dist(p) <= input.arena.range {
            reading.in_range.insert(input.ids[j].clone());
        }
    }
    for peer in agent.personality.pairs.keys() {
        let Some(&j) = input.index.get(peer) else { continue };
        let delta = input.positions[j] - me;
        let distance = delta.norm();
        let bearing = if distance > 0.0 {
            wrap_angle(delta.y.atan2(delta.x) - agent.state.heading)
        } else {
            0.0
        };
        reading.virtual_wall.insert(peer.clone(), distance <= input.arena.range);
        reading
            .peers
            .insert(peer.clone(), PeerObservation { distance, bearing });
    }
    reading
}

/// sense -> step_state -> force -> kinematics -> boundary, for one agent.
fn advance_agent(input: &TickInput<'_>, agent: &mut Agent) -> Result<(), MobilityError> {
    let arena = input.arena;
    let i = input.index[&agent.id];
    let sensors = sense(input, i, agent);
    let (behavior, command) = step_state(
        &agent.state.behavior,
        &sensors,
        &agent.personality,
        input.t,
        &arena.limits(),
        &mut agent.rng,
    )?;
    agent.state.behavior = behavior;
    agent.command = command;

    let force = force_on(&agent.state, &agent.personality, |j| {
        input.index.get(j).map(|&k| input.positions[k])
    });
    let vel = commanded_velocity(force, agent.personality.drag, arena.v_max);
    let speed = vel.norm().min(arena.v_max);
    let cmd = if speed == 0.0 {
        MotionCommand::Stop
    } else {
        MotionCommand::Drive {
            speed,
            heading_rate: wrap_angle(vel.y.atan2(vel.x) - agent.state.heading) / arena.dt,
        }
    };
    let mut next = robot_execute(cmd, &agent.state, arena.dt, arena.v_max)?;
    if !arena.contains(next.pos) {
        let v = Vec2::new(next.heading.cos(), next.heading.sin()).scale(next.speed);
        let (p, v) = reflect(next.pos, v, arena);
        next.pos = p;
        next.heading = v.y.atan2(v.x);
    }
    agent.state = next;
    Ok(())
}

/// Free-function form of [`World::step`].
pub fn step_world(world: &mut World) -> Result<Vec<EncounterEvent>, MobilityError> {
    world.step()
}

/// Seeded uniform placement inside the arena.
pub fn random_position<R: Rng + ?Sized>(arena: &Arena, rng: &mut R) -> Vec2 {
    Vec2::new(rng.gen_range(0.0..=arena.width), rng.gen_range(0.0..=arena.height))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub slot_width: u64,
    pub max_iters: usize,
    /// Fraction of a violation corrected per relaxation step, in `(0, 1]`.
    pub step_size: f64,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            slot_width: 60,
            max_iters: 500,
            step_size: 0.5,
            seed: 0,
        }
    }
}

/// Positions inferred for every node in every slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTrace {
    pub nodes: Vec<NodeId>,
    pub slot_width: u64,
    /// `positions[slot][node]`, nodes in `nodes` order.
    pub positions: Vec<Vec<Vec2>>,
    /// Fraction of pair constraints met in each slot.
    pub satisfaction: Vec<f64>,
    /// Slots still violating constraints after `max_iters`.
    pub infeasible_slots: Vec<usize>,
}

impl PositionTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MobilityError> {
        let mut w = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Never)
            .from_writer(out);
        let io = |e: csv::Error| MobilityError::Io(e.into());
        w.write_record(["slot", "node", "x", "y"]).map_err(io)?;
        for (s, row) in self.positions.iter().enumerate() {
            for (id, p) in self.nodes.iter().zip(row) {
                w.write_record([s.to_string(), id.to_string(), p.x.to_string(), p.y.to_string()])
                    .map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_satisfaction_csv<W: Write>(&self, out: W) -> Result<(), MobilityError> {
        let mut w = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Never)
            .from_writer(out);
        let io = |e: csv::Error| MobilityError::Io(e.into());
        w.write_record(["slot", "satisfaction", "feasible"]).map_err(io)?;
        for (s, r) in self.satisfaction.iter().enumerate() {
            let feasible = !self.infeasible_slots.contains(&s);
            w.write_record([s.to_string(), r.to_string(), feasible.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pairs (by node index) in contact during each slot of `slot_width`.
pub fn slot_contacts(trace: &EncounterTrace, nodes: &[NodeId], slot_width: u64) -> Vec<BTreeSet<(usize, usize)>> {
    let slots = trace.horizon().div_ceil(slot_width) as usize;
    let index: BTreeMap<&NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let mut out = vec![BTreeSet::new(); slots];
    for r in trace.records() {
        let (i, j) = (index[&r.a], index[&r.b]);
        let key = (i.min(j), i.max(j));
        let first = (r.start / slot_width) as usize;
        let last = ((r.end - 1) / slot_width) as usize;
        for set in out.iter_mut().take(last.min(slots - 1) + 1).skip(first) {
            set.insert(key);
        }
    }
    out
}

// Relaxation aims slightly inside/outside the range so satisfied
// constraints do not sit on the boundary.
const RELAX_MARGIN: f64 = 0.05;
// Keeps projected moves strictly inside the displacement bound.
const DISPLACEMENT_SLACK: f64 = 1e-9;

/// Synthesises positions consistent with a contact trace: in-contact pairs
/// within range, all other pairs outside it, and per-node moves between
/// consecutive slots no longer than `v_max * slot_width`.
///
/// Each slot starts from the previous slot's solution (slot 0 from a seeded
/// uniform placement) and is relaxed pair by pair until every constraint
/// holds or `max_iters` is reached.
pub fn infer_plausible_positions(
    trace: &EncounterTrace,
    arena: &Arena,
    cfg: &InferConfig,
) -> Result<PositionTrace, MobilityError> {
    arena.validate()?;
    if trace.is_empty() {
        return Err(MobilityError::EmptyTrace);
    }
    if cfg.slot_width == 0 {
        return Err(MobilityError::InvalidConfig("slot_width must be positive".into()));
    }
    if !(cfg.step_size > 0.0 && cfg.step_size <= 1.0) {
        return Err(MobilityError::InvalidConfig("step_size must be in (0, 1]".into()));
    }
    let nodes: Vec<NodeId> = trace.nodes().iter().cloned().collect();
    let n = nodes.len();
    let contacts = slot_contacts(trace, &nodes, cfg.slot_width);
    let max_move = arena.v_max * cfg.slot_width as f64 * (1.0 - DISPLACEMENT_SLACK);
    let mut rng = rng::stream(cfg.seed, "infer");

    let mut positions: Vec<Vec<Vec2>> = Vec::with_capacity(contacts.len());
    let mut satisfaction = Vec::with_capacity(contacts.len());
    let mut infeasible_slots = Vec::new();
    let mut current: Vec<Vec2> = (0..n).map(|_| random_position(arena, &mut rng)).collect();

    for (slot, in_contact) in contacts.iter().enumerate() {
        let anchor = if slot == 0 { None } else { Some(current.clone()) };
        let project = |k: usize, p: Vec2| -> Vec2 {
            let p = arena.clamp(p);
            match &anchor {
                Some(a) => {
                    let d = p - a[k];
                    let len = d.norm();
                    if len > max_move {
                        a[k] + d.scale(max_move / len)
                    } else {
                        p
                    }
                }
                None => p,
            }
        };
        let satisfied = |pos: &[Vec2], i: usize, j: usize| {
            let d = pos[i].dist(pos[j]);
            if in_contact.contains(&(i, j)) {
                d <= arena.range
            } else {
                d > arena.range
            }
        };
        let all_ok = |pos: &[Vec2]| (0..n).all(|i| (i + 1..n).all(|j| satisfied(pos, i, j)));

        let mut iters = 0;
        while iters < cfg.max_iters && !all_ok(&current) {
            for i in 0..n {
                for j in i + 1..n {
                    let delta = current[j] - current[i];
                    let d = delta.norm();
                    let wanted = in_contact.contains(&(i, j));
                    let push = if wanted && d > arena.range * (1.0 - RELAX_MARGIN) {
                        // positive pulls together
                        d - arena.range * (1.0 - RELAX_MARGIN)
                    } else if !wanted && d <= arena.range * (1.0 + RELAX_MARGIN) {
                        -(arena.range * (1.0 + RELAX_MARGIN) - d)
                    } else {
                        continue;
                    };
                    let dir = if d > 0.0 {
                        delta.scale(1.0 / d)
                    } else {
                        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                        Vec2::new(a.cos(), a.sin())
                    };
                    let shift = dir.scale(cfg.step_size * push / 2.0);
                    current[i] = project(i, current[i] + shift);
                    current[j] = project(j, current[j] - shift);
                }
            }
            iters += 1;
        }

        let total = n * n.saturating_sub(1) / 2;
        let ok = (0..n)
            .map(|i| (i + 1..n).filter(|&j| satisfied(&current, i, j)).count())
            .sum::<usize>();
        let ratio = if total == 0 { 1.0 } else { ok as f64 / total as f64 };
        if ok < total {
            infeasible_slots.push(slot);
        }
        satisfaction.push(ratio);
        positions.push(current.clone());
    }

    Ok(PositionTrace {
        nodes,
        slot_width: cfg.slot_width,
        positions,
        satisfaction,
        infeasible_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::personality::{DwellSampler, PairPersonality};
    use crate::spectrum::PeriodicComponent;
    use std::f64::consts::PI;

    fn id(s: &str) -> NodeId {
        NodeId::new(s).unwrap()
    }

    fn pp(attract: f64, repulse: f64) -> PairPersonality {
        PairPersonality {
            attract_gain: attract,
            repulse_gain: repulse,
            intent_threshold: 0.0,
            refractory: 30.0,
            components: vec![PeriodicComponent {
                period: 600.0,
                magnitude: 1.0,
                phase: 0.0,
            }],
            dwell: DwellSampler::new(vec![20.0]).unwrap(),
        }
    }

    fn two_node_maps(
        behavior: BehaviorState,
        attract: f64,
        repulse: f64,
        drag: f64,
    ) -> (BTreeMap<NodeId, NodeState>, BTreeMap<NodeId, Personality>) {
        let mut states = BTreeMap::new();
        states.insert(
            id("i"),
            NodeState {
                behavior,
                ..NodeState::at(Vec2::new(0.0, 0.0))
            },
        );
        states.insert(id("j"), NodeState::at(Vec2::new(10.0, 0.0)));
        let mut p = Personality::new(id("i"), drag);
        p.pairs.insert(id("j"), pp(attract, repulse));
        let mut ps = BTreeMap::new();
        ps.insert(id("i"), p);
        (states, ps)
    }

    #[test]
    fn force_examples() {
        let (s, p) = two_node_maps(BehaviorState::Seek { target: id("j") }, 2.0, 1.0, 0.0);
        assert_eq!(compute_force(&id("i"), &s, &p, 0.0), Vec2::new(2.0, 0.0));

        let dwell = BehaviorState::Dwell {
            target: id("j"),
            since: 0.0,
            duration: 5.0,
        };
        let (s, p) = two_node_maps(dwell, 2.0, 1.0, 0.0);
        assert_eq!(compute_force(&id("i"), &s, &p, 0.0), Vec2::ZERO);

        let repel = BehaviorState::Repel {
            target: id("j"),
            until: 10.0,
        };
        let (s, p) = two_node_maps(repel, 2.0, 1.0, 1.0);
        let f = compute_force(&id("i"), &s, &p, 0.0);
        assert_eq!(f, Vec2::new(-1.0, 0.0));
        assert_eq!(commanded_velocity(f, 1.0, 10.0), Vec2::new(-0.5, 0.0));
    }

    #[test]
    fn coincident_positions_give_no_force() {
        let (mut s, p) = two_node_maps(BehaviorState::Seek { target: id("j") }, 2.0, 1.0, 0.0);
        s.get_mut(&id("j")).unwrap().pos = Vec2::ZERO;
        assert_eq!(compute_force(&id("i"), &s, &p, 0.0), Vec2::ZERO);
    }

    #[test]
    fn speed_is_capped_and_drag_monotone() {
        let f = Vec2::new(3.0, 4.0);
        assert!((commanded_velocity(f, 0.0, 0.5).norm() - 0.5).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for d in [0.0, 0.5, 1.0, 5.0, 50.0, 1e6] {
            let v = commanded_velocity(Vec2::new(0.3, 0.1), d, 0.5).norm();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn kinematics() {
        let s = NodeState::at(Vec2::new(1.0, 1.0));
        let n = robot_execute(
            MotionCommand::Drive {
                speed: 1.0,
                heading_rate: 0.0,
            },
            &s,
            1.0,
            2.0,
        )
        .unwrap();
        assert!((n.pos.x - 2.0).abs() < 1e-12 && (n.pos.y - 1.0).abs() < 1e-12);

        let n = robot_execute(
            MotionCommand::Drive {
                speed: 0.0,
                heading_rate: PI / 2.0,
            },
            &s,
            1.0,
            2.0,
        )
        .unwrap();
        assert!((n.heading - PI / 2.0).abs() < 1e-12);
        assert_eq!(n.pos, s.pos);

        let moving = NodeState {
            speed: 0.4,
            ..s.clone()
        };
        let n = robot_execute(MotionCommand::Stop, &moving, 1.0, 2.0).unwrap();
        assert_eq!((n.speed, n.pos), (0.0, s.pos));

        let err = robot_execute(
            MotionCommand::Drive {
                speed: 3.0,
                heading_rate: 0.0,
            },
            &s,
            1.0,
            2.0,
        );
        assert!(matches!(err, Err(MobilityError::SpeedLimit { .. })));
        assert!(matches!(
            robot_execute(MotionCommand::Stop, &s, 0.0, 2.0),
            Err(MobilityError::InvalidStep(_))
        ));
    }

    #[test]
    fn reflection_at_walls() {
        let arena = Arena::default();
        let (p, v) = reflect(Vec2::new(100.3, 50.0), Vec2::new(0.5, 0.1), &arena);
        assert!((p.x - 99.7).abs() < 1e-9);
        assert_eq!(v, Vec2::new(-0.5, 0.1));
        let (p, v) = reflect(Vec2::new(5.0, -0.2), Vec2::new(0.0, -0.2), &arena);
        assert!((p.y - 0.2).abs() < 1e-12);
        assert_eq!(v, Vec2::new(0.0, 0.2));
    }

    #[test]
    fn arena_validation() {
        assert!(Arena::default().validate().is_ok());
        let bad = Arena {
            range: 60.0,
            ..Arena::default()
        };
        assert!(bad.validate().is_err());
        let bad = Arena {
            dt: 0.0,
            ..Arena::default()
        };
        assert!(bad.validate().is_err());
    }

    fn lone(id_: &str, pos: Vec2) -> AgentSpec {
        AgentSpec {
            personality: Personality::new(id(id_), 0.0),
            pos,
            heading: 0.0,
        }
    }

    #[test]
    fn idle_node_stays_put() {
        let mut w = World::new(
            Arena::default(),
            vec![lone("A", Vec2::new(20.0, 30.0))],
            1,
            Execution::Sequential,
        )
        .unwrap();
        for _ in 0..50 {
            assert!(w.step().unwrap().is_empty());
        }
        assert_eq!(w.state(&id("A")).unwrap().pos, Vec2::new(20.0, 30.0));
    }

    fn seeker_pair(gap: f64) -> Vec<AgentSpec> {
        let mut a = Personality::new(id("A"), 0.0);
        a.pairs.insert(id("B"), pp(1.0, 1.0));
        vec![
            AgentSpec {
                personality: a,
                pos: Vec2::new(20.0, 50.0),
                heading: 0.0,
            },
            lone("B", Vec2::new(20.0 + gap, 50.0)),
        ]
    }

    #[test]
    fn closing_pair_emits_one_start() {
        let mut w = World::new(Arena::default(), seeker_pair(20.0), 3, Execution::Sequential).unwrap();
        let mut starts = Vec::new();
        for _ in 0..40 {
            for e in w.step().unwrap() {
                starts.push(e);
            }
        }
        // A closes 0.5 m/s from 20 m; range 10 m reached at t = 20
        assert_eq!(starts.len(), 1);
        assert_eq!(starts[0].kind, EncounterKind::Start);
        assert_eq!(starts[0].t, 20.0);
    }

    #[test]
    fn world_rejects_bad_setup() {
        let mut a = Personality::new(id("A"), 0.0);
        a.pairs.insert(id("Z"), pp(1.0, 1.0));
        let spec = vec![AgentSpec {
            personality: a,
            pos: Vec2::new(1.0, 1.0),
            heading: 0.0,
        }];
        assert!(matches!(
            World::new(Arena::default(), spec, 0, Execution::Sequential),
            Err(MobilityError::UnknownPeer { .. })
        ));
        let dup = vec![lone("A", Vec2::new(1.0, 1.0)), lone("A", Vec2::new(2.0, 1.0))];
        assert!(matches!(
            World::new(Arena::default(), dup, 0, Execution::Sequential),
            Err(MobilityError::DuplicateNode(_))
        ));
        assert!(matches!(
            World::new(
                Arena::default(),
                vec![lone("A", Vec2::new(-1.0, 1.0))],
                0,
                Execution::Sequential
            ),
            Err(MobilityError::OutsideArena { .. })
        ));
    }

    #[test]
    fn events_close_into_trace() {
        let ev = |kind, t| EncounterEvent {
            kind,
            a: id("A"),
            b: id("B"),
            t,
        };
        let events = vec![
            ev(EncounterKind::Start, 10.0),
            ev(EncounterKind::End, 40.0),
            ev(EncounterKind::Start, 90.0),
        ];
        let t = events_to_trace(&events, [id("A"), id("B")], 100.0);
        let got: Vec<_> = t.records().iter().map(|r| (r.start, r.end)).collect();
        assert_eq!(got, vec![(10, 40), (90, 100)]);
        assert_eq!(t.horizon(), 100);
    }

    fn contact_trace(slots: u64, w: u64, contact: impl Fn(u64) -> Vec<(&'static str, &'static str)>) -> EncounterTrace {
        let mut recs = Vec::new();
        for s in 0..slots {
            for (a, b) in contact(s) {
                recs.push(EncounterRecord::new(id(a), id(b), s * w, (s + 1) * w).unwrap());
            }
        }
        EncounterTrace::new(recs, [id("A"), id("B"), id("C")], slots * w)
    }

    /// Independent constraint check over emitted positions.
    fn check(trace: &EncounterTrace, arena: &Arena, pt: &PositionTrace) -> (f64, usize) {
        let mut ok = 0;
        let mut total = 0;
        let mut speed_violations = 0;
        let w = pt.slot_width;
        for (s, row) in pt.positions.iter().enumerate() {
            let (lo, hi) = (s as u64 * w, (s as u64 + 1) * w);
            for i in 0..pt.nodes.len() {
                for j in i + 1..pt.nodes.len() {
                    let met = trace
                        .pair_intervals(&pt.nodes[i], &pt.nodes[j])
                        .iter()
                        .any(|&(a, b)| a < hi && b > lo);
                    let d = row[i].dist(row[j]);
                    total += 1;
                    if met == (d <= arena.range) {
                        ok += 1;
                    }
                }
                if s > 0 && pt.positions[s - 1][i].dist(row[i]) > arena.v_max * w as f64 {
                    speed_violations += 1;
                }
            }
        }
        (ok as f64 / total as f64, speed_violations)
    }

    #[test]
    fn always_and_never_in_contact() {
        let arena = Arena::default();
        let cfg = InferConfig::default();
        let t = contact_trace(30, 60, |_| vec![("A", "B")]);
        let pt = infer_plausible_positions(&t, &arena, &cfg).unwrap();
        for row in &pt.positions {
            assert!(row[0].dist(row[1]) <= arena.range);
            // C never meets anyone
            assert!(row[2].dist(row[0]) > arena.range && row[2].dist(row[1]) > arena.range);
        }
        assert_eq!(check(&t, &arena, &pt), (1.0, 0));
    }

    #[test]
    fn path_graph_satisfaction() {
        let arena = Arena::default();
        let t = contact_trace(100, 60, |_| vec![("A", "B"), ("A", "C")]);
        let pt = infer_plausible_positions(&t, &arena, &InferConfig::default()).unwrap();
        let (ratio, violations) = check(&t, &arena, &pt);
        assert!(ratio >= 0.95, "{ratio}");
        assert_eq!(violations, 0);
        let reported = pt.satisfaction.iter().sum::<f64>() / pt.satisfaction.len() as f64;
        assert!((reported - ratio).abs() < 1e-12);
    }

    #[test]
    fn infer_errors() {
        let empty = EncounterTrace::new([], [id("A")], 10);
        assert!(matches!(
            infer_plausible_positions(&empty, &Arena::default(), &InferConfig::default()),
            Err(MobilityError::EmptyTrace)
        ));
        let t = contact_trace(2, 60, |_| vec![("A", "B")]);
        let cfg = InferConfig {
            slot_width: 0,
            ..InferConfig::default()
        };
        assert!(infer_plausible_positions(&t, &Arena::default(), &cfg).is_err());
    }
}
