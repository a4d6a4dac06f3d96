//! Scenario configuration, the simulation loop, metrics and fidelity checks.
//!
//! A run is mobility first, routing second: the world is stepped for the
//! whole duration and its encounter events are then replayed through
//! [`profilecast::replay`]. Replaying an exported encounter log therefore
//! reproduces a simulation's message log exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::exec::Execution;
use crate::mobility::{
    events_to_trace, random_position, AgentSpec, Arena, EncounterEvent, EncounterKind, MobilityError, PositionRow,
    Vec2, World,
};
use crate::personality::{Personality, PersonalityError};
use crate::profilecast::{
    qualifying_destinations, replay, BehavioralProfile, BundleId, DeliveryMode, MessageBundle, MessageEvent,
    MessageEventKind, ProfileError, RouterConfig, RoutingNode, DEFAULT_CAPACITY, DEFAULT_HOP_LIMIT, DEFAULT_TTL_S,
};
use crate::rng;
use crate::spectrum::{analyze_series, to_periods, PeriodicComponent, SpectrumConfig, SpectrumError};
use crate::trace::{
    bin_pair_series, derive_encounters_from_visits, parse_encounter_csv, parse_visit_csv, EncounterTrace, NodeId,
    TraceError, VISIT_HEADER,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no source pair appears in the generated trace")]
    NoOverlap,
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Personality(#[from] PersonalityError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

impl HarnessError {
    /// True for failures to read or write files, as opposed to bad input.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            HarnessError::Io { .. }
                | HarnessError::Trace(TraceError::Io(_))
                | HarnessError::Mobility(MobilityError::Io(_))
                | HarnessError::Profile(ProfileError::Io(_))
        )
    }
}

fn config_err(field: impl Into<String>, reason: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, HarnessError> {
    File::open(path).map(BufReader::new).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create(path: &Path) -> Result<File, HarnessError> {
    File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an encounter CSV, or a visit CSV from which encounters are derived.
pub fn load_trace(path: &Path) -> Result<EncounterTrace, HarnessError> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let fields: Vec<&str> = first.split(',').map(str::trim).collect();
    if fields == VISIT_HEADER {
        let visits = parse_visit_csv(text.as_bytes())?;
        Ok(derive_encounters_from_visits(&visits, 1))
    } else {
        Ok(parse_encounter_csv(text.as_bytes())?)
    }
}

/// Inline personality or a path to a personality JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PersonalitySource {
    Path(PathBuf),
    Inline(Personality),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: NodeId,
    pub personality: PersonalitySource,
    /// Seeded uniform placement when absent.
    #[serde(default)]
    pub start: Option<[f64; 2]>,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub profile: Option<BehavioralProfile>,
    #[serde(default)]
    pub interest: Option<BehavioralProfile>,
}

/// One entry of the bundle injection schedule. `mode` falls back to the
/// scenario's `mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub id: BundleId,
    pub src: NodeId,
    pub target_profile: BehavioralProfile,
    #[serde(default)]
    pub mode: Option<DeliveryMode>,
    #[serde(default = "default_ttl")]
    pub ttl_s: f64,
    #[serde(default = "default_hop_limit")]
    pub hop_limit: u32,
    pub created_s: f64,
    #[serde(default)]
    pub payload_size: u64,
}

fn default_ttl() -> f64 {
    DEFAULT_TTL_S
}

fn default_hop_limit() -> u32 {
    DEFAULT_HOP_LIMIT
}

fn default_refresh() -> f64 {
    30.0
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

fn default_every() -> u64 {
    1
}

fn default_fidelity() -> SpectrumConfig {
    SpectrumConfig::new(60)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default)]
    pub arena: Arena,
    pub duration_s: f64,
    pub seed: u64,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub mode: DeliveryMode,
    #[serde(default)]
    pub bundles: Vec<BundleSpec>,
    #[serde(default = "default_refresh")]
    pub contact_refresh_s: f64,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    /// Position log sampling, in ticks.
    #[serde(default = "default_every")]
    pub position_every: u64,
    /// Binning and peak policy for fidelity evaluation.
    #[serde(default = "default_fidelity")]
    pub fidelity: SpectrumConfig,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<SimConfig, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads a config and inlines personality files, resolving paths
    /// relative to the config's directory.
    pub fn load(path: &Path) -> Result<SimConfig, HarnessError> {
        let mut text = String::new();
        open(path)?
            .read_to_string(&mut text)
            .map_err(|source| HarnessError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let mut cfg = SimConfig::from_json(&text).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) -> Result<(), HarnessError> {
        for node in &mut self.nodes {
            if let PersonalitySource::Path(p) = &node.personality {
                let full = base.join(p);
                let p: Personality = serde_json::from_reader(open(&full)?)
                    .map_err(|source| HarnessError::Json { path: full, source })?;
                node.personality = PersonalitySource::Inline(p);
            }
        }
        Ok(())
    }

    /// Replaces every bundle's delivery mode.
    pub fn override_mode(&mut self, mode: DeliveryMode) {
        self.mode = mode;
        for b in &mut self.bundles {
            b.mode = Some(mode);
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(config_err(
                "duration_s",
                format!("must be positive, got {}", self.duration_s),
            ));
        }
        self.arena.validate().map_err(|e| config_err("arena", e.to_string()))?;
        if self.nodes.is_empty() {
            return Err(config_err("nodes", "at least one node is required"));
        }
        if !(self.contact_refresh_s.is_finite() && self.contact_refresh_s >= 0.0) {
            return Err(config_err("contact_refresh_s", "must be non-negative"));
        }
        if self.buffer_capacity == 0 {
            return Err(config_err("buffer_capacity", "must be at least 1"));
        }
        if self.position_every == 0 {
            return Err(config_err("position_every", "must be at least 1"));
        }
        if self.fidelity.bin_width == 0 {
            return Err(config_err("fidelity.bin_width", "must be positive"));
        }
        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let field = |f: &str| format!("nodes[{i}].{f}");
            if !ids.insert(&n.id) {
                return Err(config_err(field("id"), format!("duplicate node {}", n.id)));
            }
            let p = match &n.personality {
                PersonalitySource::Inline(p) => p,
                PersonalitySource::Path(path) => {
                    return Err(config_err(
                        field("personality"),
                        format!("unresolved personality file {}", path.display()),
                    ))
                }
            };
            if p.node != n.id {
                return Err(config_err(
                    field("personality"),
                    format!("personality belongs to {}, not {}", p.node, n.id),
                ));
            }
            p.validate()
                .map_err(|e| config_err(field("personality"), e.to_string()))?;
            if let Some([x, y]) = n.start {
                if !self.arena.contains(Vec2::new(x, y)) {
                    return Err(config_err(field("start"), format!("({x}, {y}) is outside the arena")));
                }
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if let PersonalitySource::Inline(p) = &n.personality {
                if let Some(peer) = p.pairs.keys().find(|k| !ids.contains(k)) {
                    return Err(config_err(
                        format!("nodes[{i}].personality"),
                        format!("refers to unknown node {peer}"),
                    ));
                }
            }
        }
        let mut bundle_ids = BTreeSet::new();
        for (i, b) in self.bundles.iter().enumerate() {
            let field = |f: &str| format!("bundles[{i}].{f}");
            if !bundle_ids.insert(&b.id) {
                return Err(config_err(field("id"), format!("duplicate bundle {}", b.id)));
            }
            let src = self.nodes.iter().find(|n| n.id == b.src);
            match src {
                None => return Err(config_err(field("src"), format!("unknown node {}", b.src))),
                Some(n) if n.profile.is_none() => {
                    return Err(config_err(field("src"), format!("node {} has no profile", b.src)))
                }
                _ => {}
            }
            self.bundle(b)
                .validate()
                .map_err(|e| config_err(format!("bundles[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    fn bundle(&self, b: &BundleSpec) -> MessageBundle {
        MessageBundle {
            id: b.id.clone(),
            src: b.src.clone(),
            target_profile: b.target_profile.clone(),
            mode: b.mode.unwrap_or(self.mode),
            ttl: b.ttl_s,
            hop_limit: b.hop_limit,
            created: b.created_s,
            payload_size: b.payload_size,
        }
    }

    pub fn bundles(&self) -> Vec<MessageBundle> {
        self.bundles.iter().map(|b| self.bundle(b)).collect()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    /// Nodes taking part in routing: those with a profile.
    pub fn routing_nodes(&self) -> Vec<RoutingNode> {
        self.nodes
            .iter()
            .filter_map(|n| {
                n.profile.as_ref().map(|p| RoutingNode {
                    id: n.id.clone(),
                    profile: p.clone(),
                    interest: n.interest.clone(),
                })
            })
            .collect()
    }

    pub fn router_config(&self) -> RouterConfig {
        RouterConfig {
            nodes: self.routing_nodes(),
            bundles: self.bundles(),
            contact_refresh: self.contact_refresh_s,
            capacity: self.buffer_capacity,
        }
    }

    pub fn personalities(&self) -> Vec<Personality> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.personality {
                PersonalitySource::Inline(p) => Some(p.clone()),
                PersonalitySource::Path(_) => None,
            })
            .collect()
    }

    /// Source components per canonical pair, merged over both directions.
    pub fn source_components(&self) -> BTreeMap<(NodeId, NodeId), Vec<PeriodicComponent>> {
        let mut out: BTreeMap<(NodeId, NodeId), Vec<PeriodicComponent>> = BTreeMap::new();
        for p in self.personalities() {
            for (peer, pp) in &p.pairs {
                let key = if p.node < *peer {
                    (p.node.clone(), peer.clone())
                } else {
                    (peer.clone(), p.node.clone())
                };
                let list = out.entry(key).or_default();
                for c in &pp.components {
                    if !list.iter().any(|x| x.period == c.period) {
                        list.push(*c);
                    }
                }
            }
        }
        for list in out.values_mut() {
            list.sort_by(|a, b| a.period.total_cmp(&b.period));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub min_s: f64,
    pub median_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub pair: [NodeId; 2],
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// delivered / qualifying destinations; null when nothing qualifies.
    pub delivery_ratio: Option<f64>,
    pub delivered: usize,
    pub qualifying: usize,
    pub latency: Option<LatencyStats>,
    pub forwards: usize,
    pub encounters: Vec<PairCount>,
    pub encounters_total: usize,
    pub buffer_evictions: usize,
    pub expirations: usize,
}

/// Metrics from the logs of one run. Only deliveries to qualifying
/// destinations count toward the ratio.
pub fn compute_metrics(
    bundles: &[MessageBundle],
    nodes: &[RoutingNode],
    encounters: &[EncounterEvent],
    messages: &[MessageEvent],
) -> Metrics {
    let by_id: BTreeMap<&BundleId, &MessageBundle> = bundles.iter().map(|b| (&b.id, b)).collect();
    let qualifying: BTreeSet<(BundleId, NodeId)> = bundles
        .iter()
        .flat_map(|b| {
            qualifying_destinations(b, nodes)
                .into_iter()
                .map(move |n| (b.id.clone(), n))
        })
        .collect();

    let mut reached = BTreeSet::new();
    let mut latencies = Vec::new();
    let (mut delivered, mut forwards, mut evictions, mut expirations) = (0, 0, 0, 0);
    for e in messages {
        match e.event {
            MessageEventKind::Deliver => {
                delivered += 1;
                if let Some(to) = &e.to {
                    let key = (e.bundle_id.clone(), to.clone());
                    if qualifying.contains(&key) && reached.insert(key) {
                        if let Some(b) = by_id.get(&e.bundle_id) {
                            latencies.push(e.t - b.created);
                        }
                    }
                }
            }
            MessageEventKind::Forward => forwards += 1,
            MessageEventKind::Evict => evictions += 1,
            MessageEventKind::Expire => expirations += 1,
            MessageEventKind::Create => {}
        }
    }
    latencies.sort_by(f64::total_cmp);
    let latency = (!latencies.is_empty()).then(|| {
        let n = latencies.len();
        let median = if n % 2 == 1 {
            latencies[n / 2]
        } else {
            (latencies[n / 2 - 1] + latencies[n / 2]) / 2.0
        };
        LatencyStats {
            min_s: latencies[0],
            median_s: median,
            max_s: latencies[n - 1],
        }
    });

    let mut pairs: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for e in encounters.iter().filter(|e| e.kind == EncounterKind::Start) {
        *pairs.entry((e.a.clone(), e.b.clone())).or_default() += 1;
    }
    let encounters_total = pairs.values().sum();

    Metrics {
        delivery_ratio: (!qualifying.is_empty()).then(|| reached.len() as f64 / qualifying.len() as f64),
        delivered,
        qualifying: qualifying.len(),
        latency,
        forwards,
        encounters: pairs
            .into_iter()
            .map(|((a, b), count)| PairCount { pair: [a, b], count })
            .collect(),
        encounters_total,
        buffer_evictions: evictions,
        expirations,
    }
}

/// Everything one run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub positions: Vec<PositionRow>,
    pub encounters: Vec<EncounterEvent>,
    pub messages: Vec<MessageEvent>,
    pub metrics: Metrics,
}

impl ScenarioOutput {
    /// Encounter events closed into a trace over the run's duration.
    pub fn encounter_trace(&self, cfg: &SimConfig) -> EncounterTrace {
        events_to_trace(&self.encounters, cfg.node_ids(), cfg.duration_s)
    }
}

/// Runs mobility for `duration_s / dt` ticks, then replays its encounters
/// through the routing layer.
pub fn run_scenario(cfg: &SimConfig, exec: Execution) -> Result<ScenarioOutput, HarnessError> {
    cfg.validate()?;
    let agents: Vec<AgentSpec> = cfg
        .nodes
        .iter()
        .map(|n| {
            let pos = match n.start {
                Some([x, y]) => Vec2::new(x, y),
                None => random_position(&cfg.arena, &mut rng::stream(cfg.seed, &format!("placement:{}", n.id))),
            };
            AgentSpec {
                personality: match &n.personality {
                    PersonalitySource::Inline(p) => p.clone(),
                    PersonalitySource::Path(_) => unreachable!("validated"),
                },
                pos,
                heading: n.heading,
            }
        })
        .collect();
    let mut world = World::new(cfg.arena, agents, cfg.seed, exec)?;
    let ticks = (cfg.duration_s / cfg.arena.dt).floor() as u64;
    log::info!("simulating {} nodes for {ticks} ticks", cfg.nodes.len());

    let mut positions = Vec::new();
    let mut encounters = Vec::new();
    for tick in 0..ticks {
        if tick.is_multiple_of(cfg.position_every) {
            positions.extend(world.position_rows());
        }
        encounters.extend(world.step()?);
    }
    if ticks.is_multiple_of(cfg.position_every) {
        positions.extend(world.position_rows());
    }
    log::info!("{} encounter events", encounters.len());

    let router = cfg.router_config();
    let messages = replay(&router, &encounters, cfg.duration_s)?;
    let metrics = compute_metrics(&router.bundles, &router.nodes, &encounters, &messages);
    Ok(ScenarioOutput {
        positions,
        encounters,
        messages,
        metrics,
    })
}

/// Routing only: replays a recorded encounter log under the config's roster
/// and bundle schedule.
pub fn route(cfg: &SimConfig, encounters: &[EncounterEvent]) -> Result<(Vec<MessageEvent>, Metrics), HarnessError> {
    cfg.validate()?;
    let router = cfg.router_config();
    let messages = replay(&router, encounters, cfg.duration_s)?;
    let metrics = compute_metrics(&router.bundles, &router.nodes, encounters, &messages);
    Ok((messages, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairFidelity {
    pub pair: [NodeId; 2],
    pub source: Vec<PeriodicComponent>,
    /// Fractional frequency index `N * bin_width / period` of each source component.
    pub source_k: Vec<f64>,
    pub recovered: Vec<PeriodicComponent>,
    pub recovered_k: Vec<usize>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub pairs: Vec<PairFidelity>,
    pub evaluable: usize,
    pub matched: usize,
    /// Serialized as "no components" when no pair has source components.
    #[serde(serialize_with = "ratio_or_label")]
    pub match_ratio: Option<f64>,
}

fn ratio_or_label<S: Serializer>(r: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match r {
        Some(v) => s.serialize_f64(*v),
        None => s.serialize_str("no components"),
    }
}

/// Compares the spectrum of each generated pair series against the
/// components the personalities were built from. A pair matches when every
/// source component has a recovered peak within one frequency bin.
pub fn evaluate_fidelity(
    generated: &EncounterTrace,
    source: &BTreeMap<(NodeId, NodeId), Vec<PeriodicComponent>>,
    cfg: &SpectrumConfig,
    exec: Execution,
) -> Result<FidelityReport, HarnessError> {
    let evaluable: Vec<(&(NodeId, NodeId), &Vec<PeriodicComponent>)> =
        source.iter().filter(|(_, c)| !c.is_empty()).collect();
    if evaluable.is_empty() {
        return Ok(FidelityReport {
            pairs: Vec::new(),
            evaluable: 0,
            matched: 0,
            match_ratio: None,
        });
    }
    let present = generated.pairs();
    if !evaluable.iter().any(|(k, _)| present.contains_key(*k)) {
        return Err(HarnessError::NoOverlap);
    }

    let results = exec.map(&evaluable, |((a, b), comps)| -> Result<PairFidelity, HarnessError> {
        let mut out = PairFidelity {
            pair: [a.clone(), b.clone()],
            source: comps.to_vec(),
            source_k: Vec::new(),
            recovered: Vec::new(),
            recovered_k: Vec::new(),
            matched: false,
        };
        if !(generated.nodes().contains(a) && generated.nodes().contains(b)) {
            return Ok(out);
        }
        let series = bin_pair_series(generated, (a, b), cfg.bin_width, cfg.mode)?;
        let window = (series.len() as u64 * cfg.bin_width) as f64;
        out.source_k = comps.iter().map(|c| window / c.period).collect();
        let (spec, peaks) = analyze_series(&series, &cfg.policy)?;
        out.recovered = to_periods(&peaks, spec.n, spec.bin_width)?;
        out.recovered_k = peaks.ks();
        out.matched = out
            .source_k
            .iter()
            .all(|&ks| out.recovered_k.iter().any(|&k| (k as f64 - ks).abs() <= 1.0));
        Ok(out)
    });
    let pairs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let matched = pairs.iter().filter(|p| p.matched).count();
    Ok(FidelityReport {
        evaluable: pairs.len(),
        matched,
        match_ratio: Some(matched as f64 / pairs.len() as f64),
        pairs,
    })
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> Result<(), std::io::Error> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}
