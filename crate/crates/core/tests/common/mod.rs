//! Fixtures shared by the acceptance suite and the CLI tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use encsim::harness::{BundleSpec, NodeConfig, PersonalitySource, SimConfig};
use encsim::mobility::{Arena, EncounterEvent, EncounterKind, Vec2};
use encsim::personality::{DwellSampler, PairPersonality, Personality};
use encsim::profilecast::{similarity, BehavioralProfile, BundleId, DeliveryMode};
use encsim::spectrum::{PeriodicComponent, SpectrumConfig};
use encsim::trace::{EncounterRecord, EncounterTrace};
use encsim::NodeId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn id(s: &str) -> NodeId {
    NodeId::new(s).unwrap()
}

pub fn profile(w: &[(&str, f64)]) -> BehavioralProfile {
    BehavioralProfile::from_weights(w.iter().map(|(k, v)| (k.to_string(), *v))).unwrap()
}

/// A weekly impulse train for pair A-B: one-hour contacts on days t with
/// t mod 7 == 0. A C-D contact on the last day pins the CSV horizon at
/// 128 days.
pub fn weekly_trace() -> EncounterTrace {
    let mut records: Vec<EncounterRecord> = (0..128u64)
        .filter(|t| t % 7 == 0)
        .map(|t| EncounterRecord::new(id("A"), id("B"), t * 86_400, t * 86_400 + 3_600).unwrap())
        .collect();
    records.push(EncounterRecord::new(id("C"), id("D"), 127 * 86_400, 128 * 86_400).unwrap());
    EncounterTrace::new(records, Vec::<NodeId>::new(), 128 * 86_400)
}

/// Two robots whose pair personality carries 10-minute and 35-minute
/// components; a day in the default 100 m x 100 m arena.
pub fn periodic_config(seed: u64) -> SimConfig {
    let pair = PairPersonality {
        attract_gain: 1.0,
        repulse_gain: 1.0,
        intent_threshold: 0.9,
        refractory: 60.0,
        components: [600.0, 2100.0]
            .iter()
            .map(|&period| PeriodicComponent {
                period,
                magnitude: 1.0,
                phase: 0.0,
            })
            .collect(),
        dwell: DwellSampler::new(vec![60.0]).unwrap(),
    };
    let node = |me: &str, peer: &str, place: &str| {
        let mut p = Personality::new(id(me), 0.0);
        p.pairs.insert(id(peer), pair.clone());
        NodeConfig {
            id: id(me),
            personality: PersonalitySource::Inline(p),
            start: None,
            heading: 0.0,
            profile: Some(profile(&[(place, 1.0)])),
            interest: None,
        }
    };
    SimConfig {
        arena: Arena::default(),
        duration_s: 86_400.0,
        seed,
        nodes: vec![node("A", "B", "hall"), node("B", "A", "lab")],
        mode: DeliveryMode::default(),
        bundles: vec![BundleSpec {
            id: BundleId("hello".into()),
            src: id("A"),
            target_profile: profile(&[("lab", 1.0)]),
            mode: None,
            ttl_s: 6.0 * 3600.0,
            hop_limit: 8,
            created_s: 1_000.0,
            payload_size: 64,
        }],
        contact_refresh_s: 30.0,
        buffer_capacity: 1024,
        position_every: 60,
        fidelity: SpectrumConfig::new(60),
    }
}

pub const EIGHT_NODE_ROUNDS: usize = 3;
pub const EIGHT_NODE_CONTACT_S: f64 = 10.0;
pub const EIGHT_NODE_SPACING_S: f64 = 20.0;

/// Eight nodes with hand-picked location profiles and three bundles. The
/// node names are N0..N7.
pub fn eight_node_config() -> SimConfig {
    let profiles = [
        profile(&[("L3", 1.0)]),
        profile(&[("L0", 0.2), ("L3", 0.8)]),
        profile(&[("L0", 0.5), ("L1", 0.5)]),
        profile(&[("L0", 0.8), ("L1", 0.2)]),
        profile(&[("L0", 1.0)]),
        profile(&[("L1", 1.0)]),
        profile(&[("L0", 0.6), ("L2", 0.4)]),
        profile(&[("L2", 0.7), ("L0", 0.3)]),
    ];
    let nodes = profiles
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let name = format!("N{i}");
            NodeConfig {
                id: id(&name),
                personality: PersonalitySource::Inline(Personality::new(id(&name), 0.0)),
                start: None,
                heading: 0.0,
                profile: Some(p),
                interest: None,
            }
        })
        .collect();
    let bundle = |name: &str, src: &str, target: BehavioralProfile, created: f64| BundleSpec {
        id: BundleId(name.into()),
        src: id(src),
        target_profile: target,
        mode: None,
        ttl_s: 6.0 * 3600.0,
        hop_limit: 8,
        created_s: created,
        payload_size: 128,
    };
    SimConfig {
        arena: Arena::default(),
        duration_s: 2_000.0,
        seed: 1,
        nodes,
        mode: DeliveryMode::TargetedGradient {
            sigma: 0.8,
            epsilon: 0.01,
        },
        bundles: vec![
            bundle("b-l0", "N0", profile(&[("L0", 1.0)]), 0.0),
            bundle("b-l1", "N5", profile(&[("L1", 1.0)]), 5.0),
            bundle("b-mix", "N7", profile(&[("L0", 0.5), ("L1", 0.5)]), 100.0),
        ],
        contact_refresh_s: 30.0,
        buffer_capacity: 1024,
        position_every: 1,
        fidelity: SpectrumConfig::new(60),
    }
}

/// Every pair meets once per round, one contact at a time, in
/// lexicographic pair order.
pub fn eight_node_schedule() -> Vec<EncounterEvent> {
    let names: Vec<NodeId> = (0..8).map(|i| id(&format!("N{i}"))).collect();
    let mut events = Vec::new();
    let mut t = 0.0;
    for _ in 0..EIGHT_NODE_ROUNDS {
        for i in 0..8 {
            for j in i + 1..8 {
                for (kind, at) in [
                    (EncounterKind::Start, t),
                    (EncounterKind::End, t + EIGHT_NODE_CONTACT_S),
                ] {
                    events.push(EncounterEvent {
                        kind,
                        a: names[i].clone(),
                        b: names[j].clone(),
                        t: at,
                    });
                }
                t += EIGHT_NODE_SPACING_S;
            }
        }
    }
    events
}

/// Epidemic flooding over contact intervals: every node that could hold a
/// copy of a bundle created at `created` by `src` and alive until `expires`.
pub fn flooding_reach(events: &[EncounterEvent], src: &NodeId, created: f64, expires: f64) -> BTreeSet<NodeId> {
    let mut open: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    let mut contacts = Vec::new();
    for e in events {
        let key = (e.a.clone(), e.b.clone());
        match e.kind {
            EncounterKind::Start => {
                open.insert(key, e.t);
            }
            EncounterKind::End => {
                if let Some(s) = open.remove(&key) {
                    contacts.push((s, e.t, key));
                }
            }
        }
    }
    for (key, s) in open {
        contacts.push((s, f64::INFINITY, key));
    }
    contacts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut reached: BTreeSet<NodeId> = [src.clone()].into_iter().collect();
    for (s, e, (a, b)) in contacts {
        if e < created || s > expires {
            continue;
        }
        if reached.contains(&a) || reached.contains(&b) {
            reached.insert(a);
            reached.insert(b);
        }
    }
    reached
}

/// Cosine similarity recomputed from raw weights, independent of the
/// library's normalization.
pub fn cosine(u: &BehavioralProfile, v: &BehavioralProfile) -> f64 {
    let keys: BTreeSet<&String> = u.weights().keys().chain(v.weights().keys()).collect();
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for k in keys {
        let a = u.weights().get(k).copied().unwrap_or(0.0);
        let b = v.weights().get(k).copied().unwrap_or(0.0);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let s = dot / (nu.sqrt() * nv.sqrt());
    debug_assert!((s - similarity(u, v)).abs() < 1e-12);
    s
}

/// Ground truth for plausible-mobility inference: a speed-bounded random
/// walk and the contacts it produces.
pub struct WalkTrace {
    pub nodes: Vec<NodeId>,
    pub positions: Vec<Vec<Vec2>>,
    /// `contacts[slot]` holds node-index pairs within range.
    pub contacts: Vec<BTreeSet<(usize, usize)>>,
    pub trace: EncounterTrace,
}

impl WalkTrace {
    pub fn density(&self) -> f64 {
        let n = self.nodes.len();
        let pairs = n * (n - 1) / 2 * self.contacts.len();
        self.contacts.iter().map(BTreeSet::len).sum::<usize>() as f64 / pairs as f64
    }
}

pub fn random_walk_trace(seed: u64, arena: &Arena, n: usize, slots: usize, slot_width: u64) -> WalkTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<NodeId> = (0..n).map(|i| id(&format!("W{i}"))).collect();
    let max_step = 0.9 * arena.v_max * slot_width as f64;
    let mut pos: Vec<Vec2> = (0..n)
        .map(|_| Vec2::new(rng.gen_range(0.0..arena.width), rng.gen_range(0.0..arena.height)))
        .collect();
    let mut positions = Vec::with_capacity(slots);
    for _ in 0..slots {
        positions.push(pos.clone());
        for p in pos.iter_mut() {
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let len = rng.gen_range(0.0..max_step);
            // clamping toward the interior never lengthens the step
            p.x = (p.x + len * ang.cos()).clamp(0.0, arena.width);
            p.y = (p.y + len * ang.sin()).clamp(0.0, arena.height);
        }
    }
    let contacts: Vec<BTreeSet<(usize, usize)>> = positions
        .iter()
        .map(|row| {
            let mut set = BTreeSet::new();
            for i in 0..n {
                for j in i + 1..n {
                    if row[i].dist(row[j]) <= arena.range {
                        set.insert((i, j));
                    }
                }
            }
            set
        })
        .collect();
    let mut records = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let mut s = 0;
            while s < slots {
                if contacts[s].contains(&(i, j)) {
                    let start = s;
                    while s < slots && contacts[s].contains(&(i, j)) {
                        s += 1;
                    }
                    records.push(
                        EncounterRecord::new(
                            nodes[i].clone(),
                            nodes[j].clone(),
                            start as u64 * slot_width,
                            s as u64 * slot_width,
                        )
                        .unwrap(),
                    );
                } else {
                    s += 1;
                }
            }
        }
    }
    let trace = EncounterTrace::new(records, nodes.clone(), slots as u64 * slot_width);
    WalkTrace {
        nodes,
        positions,
        contacts,
        trace,
    }
}
