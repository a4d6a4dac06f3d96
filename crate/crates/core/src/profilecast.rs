//! Profile-based DTN forwarding.
//!
//! Nodes are described by location-preference vectors. A bundle names a
//! target profile and is either steered up a similarity gradient toward
//! matching nodes ([`DeliveryMode::TargetedGradient`]) or spread among nodes
//! that declared a matching interest ([`DeliveryMode::InterestDissemination`]).
//! Forwarding always copies; the carrier keeps its own copy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::{EncounterEvent, EncounterKind};
use crate::trace::{NodeId, VisitRecord};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("node {0} has no visits to build a profile from")]
    EmptyProfile(NodeId),
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("invalid bundle {id}: {reason}")]
    InvalidBundle { id: BundleId, reason: String },
    #[error("malformed encounter log line {line}: {reason}")]
    MalformedLog { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalized location-preference vector (weights sum to one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct BehavioralProfile {
    weights: BTreeMap<String, f64>,
}

impl BehavioralProfile {
    /// Normalizes non-negative weights to sum one.
    pub fn from_weights(weights: impl IntoIterator<Item = (String, f64)>) -> Result<Self, ProfileError> {
        let mut map: BTreeMap<String, f64> = BTreeMap::new();
        for (k, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ProfileError::Invalid(format!("weight for {k} is {v}")));
            }
            *map.entry(k).or_default() += v;
        }
        map.retain(|_, v| *v > 0.0);
        let total: f64 = map.values().sum();
        if map.is_empty() || total <= 0.0 {
            return Err(ProfileError::Invalid("profile has no positive weight".into()));
        }
        for v in map.values_mut() {
            *v /= total;
        }
        Ok(BehavioralProfile { weights: map })
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    fn norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }
}

impl TryFrom<BTreeMap<String, f64>> for BehavioralProfile {
    type Error = ProfileError;
    fn try_from(m: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        BehavioralProfile::from_weights(m)
    }
}

impl From<BehavioralProfile> for BTreeMap<String, f64> {
    fn from(p: BehavioralProfile) -> Self {
        p.weights
    }
}

/// Cosine similarity over the union of locations; missing locations count
/// as zero.
pub fn similarity(u: &BehavioralProfile, v: &BehavioralProfile) -> f64 {
    let (small, large) = if u.weights.len() <= v.weights.len() {
        (u, v)
    } else {
        (v, u)
    };
    let dot: f64 = small
        .weights
        .iter()
        .filter_map(|(k, a)| large.weights.get(k).map(|b| a * b))
        .sum();
    (dot / (u.norm() * v.norm())).clamp(0.0, 1.0)
}

/// Share of the node's visit time spent at each location.
pub fn build_profile(visits: &[VisitRecord], node: &NodeId) -> Result<BehavioralProfile, ProfileError> {
    let own: Vec<(String, f64)> = visits
        .iter()
        .filter(|v| &v.node == node)
        .map(|v| (v.location.clone(), v.duration() as f64))
        .collect();
    if own.is_empty() {
        return Err(ProfileError::EmptyProfile(node.clone()));
    }
    BehavioralProfile::from_weights(own)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BundleId(pub String);

impl fmt::Display for BundleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryMode {
    /// Deliver to nodes with similarity >= sigma; copy only to peers more
    /// similar than the carrier by more than epsilon.
    #[serde(rename = "targeted")]
    TargetedGradient { sigma: f64, epsilon: f64 },
    /// Copy to (and deliver at) every peer whose interest similarity is >= sigma.
    #[serde(rename = "disseminate")]
    InterestDissemination { sigma: f64 },
}

impl DeliveryMode {
    pub fn sigma(&self) -> f64 {
        match *self {
            DeliveryMode::TargetedGradient { sigma, .. } | DeliveryMode::InterestDissemination { sigma } => sigma,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let sigma = self.sigma();
        if !(0.0..=1.0).contains(&sigma) {
            return Err(format!("sigma {sigma} outside [0, 1]"));
        }
        if let DeliveryMode::TargetedGradient { epsilon, .. } = *self {
            if !(epsilon.is_finite() && epsilon >= 0.0) {
                return Err(format!("epsilon {epsilon} must be non-negative"));
            }
        }
        Ok(())
    }
}

impl Default for DeliveryMode {
    fn default() -> Self {
        DeliveryMode::TargetedGradient {
            sigma: 0.8,
            epsilon: 0.01,
        }
    }
}

pub const DEFAULT_TTL_S: f64 = 6.0 * 3600.0;
pub const DEFAULT_HOP_LIMIT: u32 = 8;
pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageBundle {
    pub id: BundleId,
    pub src: NodeId,
    pub target_profile: BehavioralProfile,
    pub mode: DeliveryMode,
    #[serde(rename = "ttl_s", default = "default_ttl")]
    pub ttl: f64,
    #[serde(default = "default_hop_limit")]
    pub hop_limit: u32,
    #[serde(rename = "created_s")]
    pub created: f64,
    #[serde(default)]
    pub payload_size: u64,
}

fn default_ttl() -> f64 {
    DEFAULT_TTL_S
}

fn default_hop_limit() -> u32 {
    DEFAULT_HOP_LIMIT
}

impl MessageBundle {
    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |reason: String| ProfileError::InvalidBundle {
            id: self.id.clone(),
            reason,
        };
        if !(self.ttl.is_finite() && self.ttl > 0.0) {
            return Err(bad(format!("ttl {} must be positive", self.ttl)));
        }
        if self.hop_limit < 1 {
            return Err(bad("hop_limit must be at least 1".into()));
        }
        if !(self.created.is_finite() && self.created >= 0.0) {
            return Err(bad(format!("created {} must be non-negative", self.created)));
        }
        self.mode.validate().map_err(bad)
    }

    pub fn expires_at(&self) -> f64 {
        self.created + self.ttl
    }

    pub fn is_live(&self, now: f64) -> bool {
        now <= self.expires_at()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredBundle {
    pub bundle: MessageBundle,
    pub hops: u32,
    pub received_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InsertOutcome {
    Stored,
    /// Already held or seen; nothing changed.
    Duplicate,
    /// Stored at capacity; the oldest-created bundle (possibly the new one) was dropped.
    Evicted(BundleId),
}

/// A node's bundle store plus the ids it has ever received (the summary
/// vector offered to peers).
#[derive(Debug, Clone, PartialEq)]
pub struct BufferState {
    bundles: BTreeMap<BundleId, StoredBundle>,
    seen: BTreeSet<BundleId>,
    capacity: usize,
}

impl BufferState {
    pub fn new(capacity: usize) -> Self {
        BufferState {
            bundles: BTreeMap::new(),
            seen: BTreeSet::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn get(&self, id: &BundleId) -> Option<&StoredBundle> {
        self.bundles.get(id)
    }

    pub fn bundles(&self) -> impl Iterator<Item = &StoredBundle> {
        self.bundles.values()
    }

    pub fn has_seen(&self, id: &BundleId) -> bool {
        self.seen.contains(id)
    }

    pub fn mark_seen(&mut self, id: &BundleId) {
        self.seen.insert(id.clone());
    }

    pub fn insert(&mut self, bundle: MessageBundle, hops: u32, received_at: f64) -> InsertOutcome {
        if self.bundles.contains_key(&bundle.id) {
            return InsertOutcome::Duplicate;
        }
        self.seen.insert(bundle.id.clone());
        let id = bundle.id.clone();
        self.bundles.insert(
            id,
            StoredBundle {
                bundle,
                hops,
                received_at,
            },
        );
        if self.bundles.len() <= self.capacity {
            return InsertOutcome::Stored;
        }
        let oldest = self
            .bundles
            .values()
            .min_by(|a, b| {
                a.bundle
                    .created
                    .total_cmp(&b.bundle.created)
                    .then_with(|| a.bundle.id.cmp(&b.bundle.id))
            })
            .map(|s| s.bundle.id.clone())
            .expect("buffer is non-empty");
        self.bundles.remove(&oldest);
        InsertOutcome::Evicted(oldest)
    }

    /// Drops bundles with `created + ttl < now`; returns their ids.
    pub fn prune(&mut self, now: f64) -> Vec<BundleId> {
        let expired: Vec<BundleId> = self
            .bundles
            .values()
            .filter(|s| !s.bundle.is_live(now))
            .map(|s| s.bundle.id.clone())
            .collect();
        for id in &expired {
            self.bundles.remove(id);
        }
        expired
    }
}

/// Free-function form of [`BufferState::prune`] that leaves the input intact.
pub fn prune(buf: &BufferState, now: f64) -> BufferState {
    let mut out = buf.clone();
    out.prune(now);
    out
}

/// One party of an encounter as seen by the protocol.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    pub id: &'a NodeId,
    pub profile: &'a BehavioralProfile,
    /// Declared interest, used by dissemination mode.
    pub interest: Option<&'a BehavioralProfile>,
    pub buffer: &'a BufferState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ForwardAction {
    Deliver {
        bundle: BundleId,
        to: NodeId,
        similarity: f64,
    },
    ForwardCopy {
        bundle: BundleId,
        to: NodeId,
        hops: u32,
        similarity: f64,
    },
}

/// Decisions of `carrier` toward `peer` for every live bundle the peer has
/// not yet seen.
pub fn on_encounter(carrier: NodeView<'_>, peer: NodeView<'_>, t: f64) -> Vec<ForwardAction> {
    let mut actions = Vec::new();
    for stored in carrier.buffer.bundles() {
        let b = &stored.bundle;
        if !b.is_live(t) || peer.buffer.has_seen(&b.id) {
            continue;
        }
        let copy_allowed = stored.hops < b.hop_limit;
        match b.mode {
            DeliveryMode::TargetedGradient { sigma, epsilon } => {
                let peer_sim = similarity(peer.profile, &b.target_profile);
                let carrier_sim = similarity(carrier.profile, &b.target_profile);
                if peer_sim >= sigma {
                    actions.push(ForwardAction::Deliver {
                        bundle: b.id.clone(),
                        to: peer.id.clone(),
                        similarity: peer_sim,
                    });
                }
                if copy_allowed && peer_sim > carrier_sim + epsilon {
                    actions.push(ForwardAction::ForwardCopy {
                        bundle: b.id.clone(),
                        to: peer.id.clone(),
                        hops: stored.hops + 1,
                        similarity: peer_sim,
                    });
                }
            }
            DeliveryMode::InterestDissemination { sigma } => {
                let interest_sim = peer.interest.map_or(0.0, |p| similarity(p, &b.target_profile));
                if interest_sim >= sigma {
                    actions.push(ForwardAction::Deliver {
                        bundle: b.id.clone(),
                        to: peer.id.clone(),
                        similarity: interest_sim,
                    });
                    if copy_allowed {
                        actions.push(ForwardAction::ForwardCopy {
                            bundle: b.id.clone(),
                            to: peer.id.clone(),
                            hops: stored.hops + 1,
                            similarity: interest_sim,
                        });
                    }
                }
            }
        }
    }
    actions
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageEventKind {
    Create,
    Forward,
    Deliver,
    Expire,
    Evict,
}

impl fmt::Display for MessageEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageEventKind::Create => "create",
            MessageEventKind::Forward => "forward",
            MessageEventKind::Deliver => "deliver",
            MessageEventKind::Expire => "expire",
            MessageEventKind::Evict => "evict",
        })
    }
}

impl std::str::FromStr for MessageEventKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "create" => MessageEventKind::Create,
            "forward" => MessageEventKind::Forward,
            "deliver" => MessageEventKind::Deliver,
            "expire" => MessageEventKind::Expire,
            "evict" => MessageEventKind::Evict,
            other => return Err(format!("unknown message event {other:?}")),
        })
    }
}

/// One row of the message log (`event,bundle_id,from,to,t_s,similarity`).
/// `from` is empty for create/expire/evict; `to` is the node holding the
/// bundle for expire/evict and the source for create.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageEvent {
    pub event: MessageEventKind,
    pub bundle_id: BundleId,
    pub from: Option<NodeId>,
    pub to: Option<NodeId>,
    pub t: f64,
    pub similarity: Option<f64>,
}

pub const MESSAGE_HEADER: [&str; 6] = ["event", "bundle_id", "from", "to", "t_s", "similarity"];

pub fn write_message_log<W: Write>(events: &[MessageEvent], out: W) -> Result<(), ProfileError> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    let io = |e: csv::Error| ProfileError::Io(e.into());
    w.write_record(MESSAGE_HEADER).map_err(io)?;
    let opt = |n: &Option<NodeId>| n.as_ref().map(|n| n.to_string()).unwrap_or_default();
    for e in events {
        w.write_record([
            e.event.to_string(),
            e.bundle_id.to_string(),
            opt(&e.from),
            opt(&e.to),
            e.t.to_string(),
            e.similarity.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn malformed(line: u64, reason: impl Into<String>) -> ProfileError {
    ProfileError::MalformedLog {
        line,
        reason: reason.into(),
    }
}

fn read_rows<R: Read>(input: R, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>, ProfileError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(input);
    let mut rows = Vec::new();
    let mut header_seen = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| malformed(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
        if !header_seen {
            if fields != header {
                return Err(malformed(line, format!("expected header {}", header.join(","))));
            }
            header_seen = true;
            continue;
        }
        if fields.len() != header.len() {
            return Err(malformed(line, format!("expected {} fields", header.len())));
        }
        rows.push((line, fields));
    }
    if !header_seen {
        return Err(malformed(0, "missing header"));
    }
    Ok(rows)
}

fn node_field(line: u64, s: &str) -> Result<NodeId, ProfileError> {
    NodeId::new(s).map_err(|e| malformed(line, e.to_string()))
}

fn time_field(line: u64, s: &str) -> Result<f64, ProfileError> {
    s.parse::<f64>()
        .ok()
        .filter(|t| t.is_finite() && *t >= 0.0)
        .ok_or_else(|| malformed(line, format!("bad time {s:?}")))
}

pub fn read_message_log<R: Read>(input: R) -> Result<Vec<MessageEvent>, ProfileError> {
    let opt_node = |line, s: &str| -> Result<Option<NodeId>, ProfileError> {
        if s.is_empty() {
            Ok(None)
        } else {
            node_field(line, s).map(Some)
        }
    };
    read_rows(input, &MESSAGE_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(MessageEvent {
                event: f[0].parse().map_err(|e: String| malformed(line, e))?,
                bundle_id: BundleId(f[1].clone()),
                from: opt_node(line, &f[2])?,
                to: opt_node(line, &f[3])?,
                t: time_field(line, &f[4])?,
                similarity: if f[5].is_empty() {
                    None
                } else {
                    Some(f[5].parse().map_err(|_| malformed(line, "bad similarity"))?)
                },
            })
        })
        .collect()
}

/// Reads an encounter event log (`type,node_a,node_b,t_s`).
pub fn read_encounter_events<R: Read>(input: R) -> Result<Vec<EncounterEvent>, ProfileError> {
    read_rows(input, &crate::mobility::ENCOUNTER_EVENT_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let kind = match f[0].as_str() {
                "start" => EncounterKind::Start,
                "end" => EncounterKind::End,
                other => return Err(malformed(line, format!("unknown event type {other:?}"))),
            };
            let (a, b) = (node_field(line, &f[1])?, node_field(line, &f[2])?);
            if a == b {
                return Err(malformed(line, "self encounter"));
            }
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            Ok(EncounterEvent {
                kind,
                a,
                b,
                t: time_field(line, &f[3])?,
            })
        })
        .collect()
}

/// A node as configured for routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingNode {
    pub id: NodeId,
    pub profile: BehavioralProfile,
    #[serde(default)]
    pub interest: Option<BehavioralProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterConfig {
    pub nodes: Vec<RoutingNode>,
    pub bundles: Vec<MessageBundle>,
    /// Re-exchange period while a contact lasts.
    pub contact_refresh: f64,
    pub capacity: usize,
}

/// Nodes other than the source that the bundle is meant for.
pub fn qualifying_destinations(bundle: &MessageBundle, nodes: &[RoutingNode]) -> BTreeSet<NodeId> {
    nodes
        .iter()
        .filter(|n| n.id != bundle.src)
        .filter(|n| match bundle.mode {
            DeliveryMode::TargetedGradient { sigma, .. } => similarity(&n.profile, &bundle.target_profile) >= sigma,
            DeliveryMode::InterestDissemination { sigma } => n
                .interest
                .as_ref()
                .is_some_and(|p| similarity(p, &bundle.target_profile) >= sigma),
        })
        .map(|n| n.id.clone())
        .collect()
}

struct NodeSlot {
    node: RoutingNode,
    buffer: BufferState,
}

impl NodeSlot {
    fn view(&self) -> NodeView<'_> {
        NodeView {
            id: &self.node.id,
            profile: &self.node.profile,
            interest: self.node.interest.as_ref(),
            buffer: &self.buffer,
        }
    }
}

/// Replays encounter events through the protocol and returns the message
/// log. Depends only on the events, the config and `end`, so a simulation
/// and a later replay of its exported encounter log agree exactly.
///
/// At each instant the order is: expire, create, contact ends, contact
/// starts, contact refreshes; pairs in `(a, b)` order, `a` offering first.
pub fn replay(cfg: &RouterConfig, events: &[EncounterEvent], end: f64) -> Result<Vec<MessageEvent>, ProfileError> {
    let mut nodes: BTreeMap<NodeId, NodeSlot> = BTreeMap::new();
    for n in &cfg.nodes {
        nodes.insert(
            n.id.clone(),
            NodeSlot {
                node: n.clone(),
                buffer: BufferState::new(cfg.capacity),
            },
        );
    }
    let mut bundles = cfg.bundles.clone();
    for b in &bundles {
        b.validate()?;
        if !nodes.contains_key(&b.src) {
            return Err(ProfileError::InvalidBundle {
                id: b.id.clone(),
                reason: format!("unknown source {}", b.src),
            });
        }
    }
    bundles.sort_by(|x, y| x.created.total_cmp(&y.created).then_with(|| x.id.cmp(&y.id)));

    let mut events: Vec<&EncounterEvent> = events.iter().filter(|e| e.t <= end).collect();
    events.sort_by(|x, y| {
        x.t.total_cmp(&y.t)
            .then(y.kind.cmp(&x.kind)) // End before Start at the same instant
            .then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b)))
    });

    let mut log = Vec::new();
    let mut delivered: BTreeSet<(BundleId, NodeId)> = BTreeSet::new();
    // open contacts -> (start time, refreshes done)
    let mut open: BTreeMap<(NodeId, NodeId), (f64, u64)> = BTreeMap::new();
    let refresh = cfg.contact_refresh;
    let next_refresh = |start: f64, done: u64| start + (done + 1) as f64 * refresh;

    let (mut ei, mut bi) = (0usize, 0usize);
    loop {
        let mut t = f64::INFINITY;
        if let Some(e) = events.get(ei) {
            t = t.min(e.t);
        }
        if let Some(b) = bundles.get(bi) {
            t = t.min(b.created);
        }
        if refresh > 0.0 {
            for &(s, done) in open.values() {
                t = t.min(next_refresh(s, done));
            }
        }
        if t.is_infinite() || t > end {
            break;
        }

        expire_all(&mut nodes, t, &mut log);

        while let Some(b) = bundles.get(bi).filter(|b| b.created <= t) {
            let slot = nodes.get_mut(&b.src).expect("validated source");
            log.push(MessageEvent {
                event: MessageEventKind::Create,
                bundle_id: b.id.clone(),
                from: None,
                to: Some(b.src.clone()),
                t,
                similarity: None,
            });
            if let InsertOutcome::Evicted(id) = slot.buffer.insert(b.clone(), 0, t) {
                log.push(evict_event(id, &b.src, t));
            }
            bi += 1;
        }

        let mut starts = Vec::new();
        while let Some(e) = events.get(ei).filter(|e| e.t <= t) {
            let key = (e.a.clone(), e.b.clone());
            match e.kind {
                EncounterKind::End => {
                    open.remove(&key);
                }
                EncounterKind::Start => {
                    if !open.contains_key(&key) {
                        open.insert(key.clone(), (e.t, 0));
                        starts.push(key);
                    }
                }
            }
            ei += 1;
        }
        for (a, b) in &starts {
            exchange(&mut nodes, a, b, t, &mut delivered, &mut log);
        }
        if refresh > 0.0 {
            let due: Vec<(NodeId, NodeId)> = open
                .iter()
                .filter(|(_, &(s, done))| next_refresh(s, done) <= t)
                .map(|(k, _)| k.clone())
                .collect();
            for key in due {
                if let Some(entry) = open.get_mut(&key) {
                    entry.1 += 1;
                }
                exchange(&mut nodes, &key.0, &key.1, t, &mut delivered, &mut log);
            }
        }
    }
    expire_all(&mut nodes, end, &mut log);
    Ok(log)
}

fn evict_event(id: BundleId, holder: &NodeId, t: f64) -> MessageEvent {
    MessageEvent {
        event: MessageEventKind::Evict,
        bundle_id: id,
        from: None,
        to: Some(holder.clone()),
        t,
        similarity: None,
    }
}

fn expire_all(nodes: &mut BTreeMap<NodeId, NodeSlot>, t: f64, log: &mut Vec<MessageEvent>) {
    for (id, slot) in nodes.iter_mut() {
        for bundle_id in slot.buffer.prune(t) {
            log.push(MessageEvent {
                event: MessageEventKind::Expire,
                bundle_id,
                from: None,
                to: Some(id.clone()),
                t,
                similarity: None,
            });
        }
    }
}

fn exchange(
    nodes: &mut BTreeMap<NodeId, NodeSlot>,
    a: &NodeId,
    b: &NodeId,
    t: f64,
    delivered: &mut BTreeSet<(BundleId, NodeId)>,
    log: &mut Vec<MessageEvent>,
) {
    if !(nodes.contains_key(a) && nodes.contains_key(b)) {
        // contacts with nodes outside the routing roster carry nothing
        return;
    }
    for (from, to) in [(a, b), (b, a)] {
        let actions = on_encounter(nodes[from].view(), nodes[to].view(), t);
        for action in actions {
            match action {
                ForwardAction::Deliver {
                    bundle,
                    to: dest,
                    similarity,
                } => {
                    if delivered.insert((bundle.clone(), dest.clone())) {
                        log.push(MessageEvent {
                            event: MessageEventKind::Deliver,
                            bundle_id: bundle.clone(),
                            from: Some(from.clone()),
                            to: Some(dest.clone()),
                            t,
                            similarity: Some(similarity),
                        });
                    }
                    nodes.get_mut(&dest).expect("peer exists").buffer.mark_seen(&bundle);
                }
                ForwardAction::ForwardCopy {
                    bundle,
                    to: dest,
                    hops,
                    similarity,
                } => {
                    let copy = nodes[from]
                        .buffer
                        .get(&bundle)
                        .expect("carrier holds the bundle")
                        .bundle
                        .clone();
                    let peer = nodes.get_mut(&dest).expect("peer exists");
                    let outcome = peer.buffer.insert(copy, hops, t);
                    if outcome == InsertOutcome::Duplicate {
                        continue;
                    }
                    log.push(MessageEvent {
                        event: MessageEventKind::Forward,
                        bundle_id: bundle.clone(),
                        from: Some(from.clone()),
                        to: Some(dest.clone()),
                        t,
                        similarity: Some(similarity),
                    });
                    if let InsertOutcome::Evicted(id) = outcome {
                        log.push(evict_event(id, &dest, t));
                    }
                }
            }
        }
    }
}
