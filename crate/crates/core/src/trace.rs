//! Encounter and visit traces: data model, CSV ingestion and binning.
//!
//! Times are integer seconds from the trace epoch. Encounter intervals are
//! treated as half-open `[start, end)` when intersected with bins.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENCOUNTER_HEADER: [&str; 4] = ["node_a", "node_b", "start_s", "end_s"];
pub const VISIT_HEADER: [&str; 4] = ["node", "location", "start_s", "end_s"];

/// Opaque, non-empty node identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Result<Self, RecordError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(RecordError::EmptyNodeId);
        }
        Ok(NodeId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for NodeId {
    type Error = RecordError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        NodeId::new(s)
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> Self {
        id.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Violations of a single record's invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("node id must be non-empty")]
    EmptyNodeId,
    #[error("interval end {end} is not after start {start}")]
    InvalidInterval { start: u64, end: u64 },
    #[error("node {0} cannot encounter itself")]
    SelfEncounter(NodeId),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: {source}")]
    InvalidRecord {
        line: u64,
        #[source]
        source: RecordError,
    },
    #[error("bad header {found:?}, expected {expected:?}")]
    BadHeader {
        found: Vec<String>,
        expected: [&'static str; 4],
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("bin width must be positive")]
    ZeroBinWidth,
    #[error("trace horizon is zero, no bins to produce")]
    EmptyHorizon,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TraceError {
    /// The record-level cause, if this error wraps one.
    pub fn record_error(&self) -> Option<&RecordError> {
        match self {
            TraceError::InvalidRecord { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// One contact between two distinct nodes, stored with `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub a: NodeId,
    pub b: NodeId,
    pub start: u64,
    pub end: u64,
}

impl EncounterRecord {
    pub fn new(x: NodeId, y: NodeId, start: u64, end: u64) -> Result<Self, RecordError> {
        if x == y {
            return Err(RecordError::SelfEncounter(x));
        }
        if end <= start {
            return Err(RecordError::InvalidInterval { start, end });
        }
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        Ok(EncounterRecord { a, b, start, end })
    }

    pub fn pair(&self) -> (&NodeId, &NodeId) {
        (&self.a, &self.b)
    }

    pub fn duration(&self) -> u64 {
        self.end - self.start
    }
}

/// Orders a pair canonically (smaller id first).
pub fn canonical_pair(x: NodeId, y: NodeId) -> (NodeId, NodeId) {
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

/// A canonical encounter trace.
///
/// Construction merges overlapping or touching records of the same pair and
/// sorts by `(start, a, b)`, so two traces built from the same contacts in
/// any order compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EncounterTrace {
    records: Vec<EncounterRecord>,
    horizon: u64,
    nodes: BTreeSet<NodeId>,
}

impl EncounterTrace {
    /// Builds a trace from records. `extra_nodes` are added to the node set
    /// even if they never meet anyone. The horizon is the larger of
    /// `min_horizon` and the latest record end.
    pub fn new(
        records: impl IntoIterator<Item = EncounterRecord>,
        extra_nodes: impl IntoIterator<Item = NodeId>,
        min_horizon: u64,
    ) -> Self {
        let mut by_pair: BTreeMap<(NodeId, NodeId), Vec<(u64, u64)>> = BTreeMap::new();
        for r in records {
            by_pair.entry((r.a, r.b)).or_default().push((r.start, r.end));
        }
        let mut nodes: BTreeSet<NodeId> = extra_nodes.into_iter().collect();
        let mut merged = Vec::new();
        for ((a, b), intervals) in by_pair {
            nodes.insert(a.clone());
            nodes.insert(b.clone());
            for (start, end) in merge_intervals(intervals) {
                merged.push(EncounterRecord {
                    a: a.clone(),
                    b: b.clone(),
                    start,
                    end,
                });
            }
        }
        merged.sort_by(|x, y| (x.start, &x.a, &x.b, x.end).cmp(&(y.start, &y.a, &y.b, y.end)));
        let horizon = merged.iter().map(|r| r.end).max().unwrap_or(0).max(min_horizon);
        EncounterTrace {
            records: merged,
            horizon,
            nodes,
        }
    }

    pub fn records(&self) -> &[EncounterRecord] {
        &self.records
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted intervals of one pair (order of `x`, `y` is irrelevant).
    pub fn pair_intervals(&self, x: &NodeId, y: &NodeId) -> Vec<(u64, u64)> {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        self.records
            .iter()
            .filter(|r| &r.a == a && &r.b == b)
            .map(|r| (r.start, r.end))
            .collect()
    }

    /// Every pair that has at least one encounter, with its intervals.
    pub fn pairs(&self) -> BTreeMap<(NodeId, NodeId), Vec<(u64, u64)>> {
        let mut out: BTreeMap<(NodeId, NodeId), Vec<(u64, u64)>> = BTreeMap::new();
        for r in &self.records {
            out.entry((r.a.clone(), r.b.clone()))
                .or_default()
                .push((r.start, r.end));
        }
        out
    }

    /// Total encounter seconds of a pair, clipped to the horizon.
    pub fn pair_total_seconds(&self, x: &NodeId, y: &NodeId) -> u64 {
        self.pair_intervals(x, y)
            .iter()
            .map(|&(s, e)| e.min(self.horizon).saturating_sub(s))
            .sum()
    }

    fn require_node(&self, n: &NodeId) -> Result<(), TraceError> {
        if self.nodes.contains(n) {
            Ok(())
        } else {
            Err(TraceError::UnknownNode(n.clone()))
        }
    }
}

fn merge_intervals(mut intervals: Vec<(u64, u64)>) -> Vec<(u64, u64)> {
    intervals.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(intervals.len());
    for (s, e) in intervals {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(input)
}

fn csv_error(e: csv::Error) -> TraceError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => TraceError::Io(io),
            _ => unreachable!(),
        }
    } else {
        TraceError::MalformedRow {
            line,
            reason: e.to_string(),
        }
    }
}

/// Iterates data rows of a 4-column CSV after checking its header.
/// Yields `(line, fields)`; blank lines are skipped.
fn rows<R: Read>(input: R, expected: [&'static str; 4]) -> Result<Vec<(u64, [String; 4])>, TraceError> {
    let mut reader = csv_reader(input);
    let mut out = Vec::new();
    let mut header_seen = false;
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if !header_seen {
            let found: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
            if found.len() != 4 || found.iter().zip(expected).any(|(f, e)| f != e) {
                return Err(TraceError::BadHeader { found, expected });
            }
            header_seen = true;
            continue;
        }
        if rec.len() != 4 {
            return Err(TraceError::MalformedRow {
                line,
                reason: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        out.push((
            line,
            [
                rec[0].trim().to_string(),
                rec[1].trim().to_string(),
                rec[2].trim().to_string(),
                rec[3].trim().to_string(),
            ],
        ));
    }
    if !header_seen {
        return Err(TraceError::BadHeader {
            found: Vec::new(),
            expected,
        });
    }
    Ok(out)
}

fn parse_seconds(line: u64, field: &str, name: &str) -> Result<u64, TraceError> {
    field.parse::<u64>().map_err(|_| TraceError::MalformedRow {
        line,
        reason: format!("{name} {field:?} is not a non-negative integer"),
    })
}

fn parse_node(line: u64, field: &str) -> Result<NodeId, TraceError> {
    NodeId::new(field).map_err(|source| TraceError::InvalidRecord { line, source })
}

/// Reads an encounter CSV (`node_a,node_b,start_s,end_s`).
pub fn parse_encounter_csv<R: Read>(input: R) -> Result<EncounterTrace, TraceError> {
    let mut records = Vec::new();
    for (line, [a, b, s, e]) in rows(input, ENCOUNTER_HEADER)? {
        let a = parse_node(line, &a)?;
        let b = parse_node(line, &b)?;
        let start = parse_seconds(line, &s, "start_s")?;
        let end = parse_seconds(line, &e, "end_s")?;
        let rec =
            EncounterRecord::new(a, b, start, end).map_err(|source| TraceError::InvalidRecord { line, source })?;
        records.push(rec);
    }
    Ok(EncounterTrace::new(records, [], 0))
}

pub fn write_encounter_csv<W: Write>(trace: &EncounterTrace, out: W) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out);
    let io = |e: csv::Error| TraceError::Io(e.into());
    w.write_record(ENCOUNTER_HEADER).map_err(io)?;
    for r in &trace.records {
        w.write_record([r.a.as_str(), r.b.as_str(), &r.start.to_string(), &r.end.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// A node's stay at a location (e.g. association with one access point).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub node: NodeId,
    pub location: String,
    pub start: u64,
    pub end: u64,
}

impl VisitRecord {
    pub fn new(node: NodeId, location: impl Into<String>, start: u64, end: u64) -> Result<Self, RecordError> {
        if end <= start {
            return Err(RecordError::InvalidInterval { start, end });
        }
        Ok(VisitRecord {
            node,
            location: location.into(),
            start,
            end,
        })
    }

    pub fn duration(&self) -> u64 {
        self.end - self.start
    }
}

/// Reads a visit CSV (`node,location,start_s,end_s`).
pub fn parse_visit_csv<R: Read>(input: R) -> Result<Vec<VisitRecord>, TraceError> {
    let mut visits = Vec::new();
    for (line, [n, loc, s, e]) in rows(input, VISIT_HEADER)? {
        let node = parse_node(line, &n)?;
        if loc.is_empty() {
            return Err(TraceError::MalformedRow {
                line,
                reason: "empty location".into(),
            });
        }
        let start = parse_seconds(line, &s, "start_s")?;
        let end = parse_seconds(line, &e, "end_s")?;
        let v = VisitRecord::new(node, loc, start, end).map_err(|source| TraceError::InvalidRecord { line, source })?;
        visits.push(v);
    }
    Ok(visits)
}

/// Derives encounters from co-located visits: two distinct nodes at the same
/// location whose stays intersect for at least `min_overlap` seconds meet for
/// the length of the intersection. The node set holds every visiting node and
/// the horizon covers the latest visit.
pub fn derive_encounters_from_visits(visits: &[VisitRecord], min_overlap: u64) -> EncounterTrace {
    let mut by_location: BTreeMap<&str, Vec<&VisitRecord>> = BTreeMap::new();
    for v in visits {
        by_location.entry(v.location.as_str()).or_default().push(v);
    }
    let mut records = Vec::new();
    for group in by_location.values() {
        for (i, u) in group.iter().enumerate() {
            for v in &group[i + 1..] {
                if u.node == v.node {
                    continue;
                }
                let start = u.start.max(v.start);
                let end = u.end.min(v.end);
                if end > start && end - start >= min_overlap {
                    // distinct nodes and end > start, so this cannot fail
                    if let Ok(r) = EncounterRecord::new(u.node.clone(), v.node.clone(), start, end) {
                        records.push(r);
                    }
                }
            }
        }
    }
    let horizon = visits.iter().map(|v| v.end).max().unwrap_or(0);
    EncounterTrace::new(records, visits.iter().map(|v| v.node.clone()), horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BinMode {
    /// 1 if any encounter intersects the bin.
    #[default]
    Indicator,
    /// Number of encounters starting in the bin.
    Count,
    /// Encounter seconds inside the bin.
    Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub values: Vec<f64>,
    pub bin_width: u64,
    pub mode: BinMode,
}

impl BinnedSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Bins a set of `[start, end)` intervals over `[0, horizon)`.
pub fn bin_intervals(
    intervals: &[(u64, u64)],
    horizon: u64,
    bin_width: u64,
    mode: BinMode,
) -> Result<BinnedSeries, TraceError> {
    if bin_width == 0 {
        return Err(TraceError::ZeroBinWidth);
    }
    if horizon == 0 {
        return Err(TraceError::EmptyHorizon);
    }
    let n = horizon.div_ceil(bin_width) as usize;
    let mut values = vec![0.0; n];
    for &(start, end) in intervals {
        let end = end.min(horizon);
        if end <= start {
            continue;
        }
        match mode {
            BinMode::Count => values[(start / bin_width) as usize] += 1.0,
            BinMode::Indicator | BinMode::Duration => {
                let first = (start / bin_width) as usize;
                let last = ((end - 1) / bin_width) as usize;
                for (k, v) in values.iter_mut().enumerate().take(last + 1).skip(first) {
                    let lo = (k as u64 * bin_width).max(start);
                    let hi = ((k as u64 + 1) * bin_width).min(end);
                    if mode == BinMode::Indicator {
                        *v = 1.0;
                    } else {
                        *v += (hi - lo) as f64;
                    }
                }
            }
        }
    }
    Ok(BinnedSeries {
        values,
        bin_width,
        mode,
    })
}

/// Time series of one pair's encounters.
pub fn bin_pair_series(
    trace: &EncounterTrace,
    pair: (&NodeId, &NodeId),
    bin_width: u64,
    mode: BinMode,
) -> Result<BinnedSeries, TraceError> {
    trace.require_node(pair.0)?;
    trace.require_node(pair.1)?;
    bin_intervals(&trace.pair_intervals(pair.0, pair.1), trace.horizon, bin_width, mode)
}

/// Node-level series: the element-wise sum of the node's pair series.
/// In indicator mode the sum counts distinct peers met in each bin.
pub fn bin_node_series(
    trace: &EncounterTrace,
    node: &NodeId,
    bin_width: u64,
    mode: BinMode,
) -> Result<BinnedSeries, TraceError> {
    trace.require_node(node)?;
    let mut total = bin_intervals(&[], trace.horizon, bin_width, mode)?;
    for ((a, b), intervals) in trace.pairs() {
        if &a != node && &b != node {
            continue;
        }
        let s = bin_intervals(&intervals, trace.horizon, bin_width, mode)?;
        for (t, v) in total.values.iter_mut().zip(s.values) {
            *t += v;
        }
    }
    Ok(total)
}
