//! Graph programming models built as dataflow protocols.
//!
//! Graph jobs use one dataflow vertex per worker machine. The ingress vertex
//! routes vertex and edge records to the worker owning each endpoint (by
//! stable hash), workers exchange messages over a full mesh, and results
//! leave through one egress vertex.

mod bsp;
mod join;
mod mapreduce;
mod sssp;
mod temporal;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::dataflow::{
    identity_protocol, DataflowError, EosCounter, GraphSpec, Message, Meta, Payload, ProtocolRegistry, StepContext,
    VertexInit, VertexLogic, VertexRole, VertexSpec,
};
use crate::store::{EntityId, Property, SnapshotHandle};
use crate::stream::Props;
use crate::tracker::TrackerError;
use crate::types::{stable_hash, Value, Version};

pub use bsp::{pagerank, pagerank_protocol, wcc, wcc_protocol, PAGERANK, WCC};
pub use join::{join_group_by, Direction, Grouping, JoinView, StructuralDelta};
pub use mapreduce::{edgecount_job, mapreduce, mapreduce_graph, mapreduce_protocol, wordcount_job, MapReduceJob};
pub use sssp::{sssp, sssp_protocol, SsspScheduler, SSSP_FIFO, SSSP_PRIORITY};
pub use temporal::{
    degree_digest, export_series, temporal_points, temporal_series, DegreeDigest, Gain, GraphSource, TemporalPoint,
    TOP_K,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("EmptyGraph: the snapshot has no live vertices")]
    EmptyGraph,
    #[error("NegativeWeight: edge {src} -> {dst} has weight {weight}")]
    NegativeWeight { src: String, dst: String, weight: i64 },
    #[error("UnknownSource: {0} is not live in the snapshot")]
    UnknownSource(String),
    #[error("BadParameter: {0}")]
    BadParameter(String),
    #[error("ViewBehindSnapshot: join view at {watermark} cannot reach {requested}")]
    ViewBehindSnapshot { watermark: Version, requested: Version },
    #[error("DeltaGap: delta log starts after {log_start}, view is at {watermark}")]
    DeltaGap { watermark: Version, log_start: Version },
    #[error("SnapshotNotAvailable: {0}")]
    SnapshotNotAvailable(Version),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
}

/// Live graph structure and properties at one version.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GraphSnapshot {
    pub version: Version,
    pub nodes: BTreeMap<String, Props>,
    /// Live links keyed (src, dst, slot), with their properties.
    pub links: BTreeMap<(String, String, String), Props>,
}

impl GraphSnapshot {
    pub fn from_handle(handle: &SnapshotHandle<'_, Value>) -> Self {
        let mut g = GraphSnapshot { version: handle.watermark(), ..Default::default() };
        let mut link_props: BTreeMap<(String, String, String), Props> = BTreeMap::new();
        let mut live_links = BTreeSet::new();
        for (key, value) in handle.entries() {
            match (&key.entity, &key.property) {
                (EntityId::Node(id), Property::Exists) => {
                    g.nodes.entry(id.clone()).or_default();
                }
                (EntityId::Node(id), Property::Field(f)) => {
                    g.nodes.entry(id.clone()).or_default().insert(f.clone(), value.clone());
                }
                (EntityId::Edge { src, dst, slot }, Property::Exists) => {
                    live_links.insert((src.clone(), dst.clone(), slot.clone()));
                }
                (EntityId::Edge { src, dst, slot }, Property::Field(f)) => {
                    link_props
                        .entry((src.clone(), dst.clone(), slot.clone()))
                        .or_default()
                        .insert(f.clone(), value.clone());
                }
            }
        }
        // Props of nodes that only appear through fields without EXISTS are
        // leftovers of a prior life; drop them.
        let live_nodes: BTreeSet<String> = handle
            .entries()
            .into_iter()
            .filter_map(|(k, _)| match (&k.entity, &k.property) {
                (EntityId::Node(id), Property::Exists) => Some(id.clone()),
                _ => None,
            })
            .collect();
        g.nodes.retain(|id, _| live_nodes.contains(id));
        for link in live_links {
            if g.nodes.contains_key(&link.0) && g.nodes.contains_key(&link.1) {
                let props = link_props.remove(&link).unwrap_or_default();
                g.links.insert(link, props);
            }
        }
        g
    }

    /// Builds a graph from plain vertex ids and weighted edges.
    pub fn from_edges<'a>(
        vertices: impl IntoIterator<Item = &'a str>,
        edges: impl IntoIterator<Item = (&'a str, &'a str, i64)>,
    ) -> Self {
        let mut g = GraphSnapshot::default();
        for v in vertices {
            g.nodes.entry(v.to_string()).or_default();
        }
        for (i, (s, d, w)) in edges.into_iter().enumerate() {
            g.nodes.entry(s.to_string()).or_default();
            g.nodes.entry(d.to_string()).or_default();
            let props = Props::from([("weight".to_string(), Value::Int(w))]);
            g.links.insert((s.to_string(), d.to_string(), format!("l{i}")), props);
        }
        g
    }

    pub fn vertex_count(&self) -> usize {
        self.nodes.len()
    }

    /// Directed edges with parallel links collapsed; the weight is the
    /// smallest integer `weight` property (default 1).
    pub fn edges(&self) -> BTreeMap<(String, String), i64> {
        let mut out: BTreeMap<(String, String), i64> = BTreeMap::new();
        for ((s, d, _), props) in &self.links {
            let w = props.get("weight").and_then(Value::as_int).unwrap_or(1);
            let e = out.entry((s.clone(), d.clone())).or_insert(w);
            *e = (*e).min(w);
        }
        out
    }

    /// Dataflow input records: `[id]` per vertex, `[src, dst, weight]` per edge.
    pub fn records(&self) -> Vec<Payload> {
        let mut out: Vec<Payload> = self.nodes.keys().map(|id| vec![Value::from(id.as_str())]).collect();
        out.extend(self.edges().into_iter().map(|((s, d), w)| vec![Value::from(s), Value::from(d), Value::Int(w)]));
        out
    }

    /// Undirected incident-link count per live vertex.
    pub fn degrees(&self) -> BTreeMap<String, i64> {
        let mut deg: BTreeMap<String, i64> = self.nodes.keys().map(|n| (n.clone(), 0)).collect();
        for (s, d, _) in self.links.keys() {
            *deg.entry(s.clone()).or_default() += 1;
            *deg.entry(d.clone()).or_default() += 1;
        }
        deg
    }
}

/// Per-vertex algorithm output.
pub type AlgoResult = BTreeMap<String, Value>;

/// JSON-lines `{"vertex":id,"value":...}` sorted by vertex.
pub fn export_result(result: &AlgoResult) -> String {
    #[derive(Serialize)]
    struct Row<'a> {
        vertex: &'a str,
        value: &'a Value,
    }
    result
        .iter()
        .map(|(vertex, value)| serde_json::to_string(&Row { vertex, value }).expect("row serializes") + "\n")
        .collect()
}

/// How a graph job is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JobConfig {
    pub workers: usize,
    pub seed: u64,
    pub step_budget: u64,
    pub trace: bool,
}

impl JobConfig {
    pub fn new(workers: usize, seed: u64) -> Self {
        Self { workers: workers.max(1), seed, step_budget: 10_000_000, trace: false }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = true;
        self
    }

    pub(crate) fn run_options(&self) -> crate::dataflow::RunOptions {
        crate::dataflow::RunOptions { seed: self.seed, step_budget: self.step_budget, trace: self.trace }
    }
}

pub fn owner_of(id: &str, workers: usize) -> usize {
    (stable_hash(id.as_bytes()) % workers as u64) as usize
}

/// Vertex ids of a worker-level graph.
pub fn worker_ids(prefix: &str, workers: usize) -> (String, Vec<String>, String) {
    (format!("{prefix}in"), (0..workers).map(|i| format!("{prefix}w{i}")).collect(), format!("{prefix}out"))
}

/// `in -> w_i` for every worker, a full worker mesh (self loops included)
/// and `w_i -> out`. Worker ports are `0..workers` for peers, then egress.
pub fn worker_graph(prefix: &str, protocol: &str, workers: usize, params: &Meta) -> GraphSpec {
    let (input, ws, output) = worker_ids(prefix, workers);
    let mut spec = GraphSpec::default()
        .vertex(VertexSpec::new(&input, protocol, VertexRole::Ingress).param("workers", workers as i64));
    for (i, w) in ws.iter().enumerate() {
        let mut v = VertexSpec::new(w, protocol, VertexRole::Internal)
            .param("workers", workers as i64)
            .param("index", i as i64);
        v.params.extend(params.iter().map(|(k, x)| (k.clone(), x.clone())));
        spec = spec.vertex(v);
    }
    spec = spec.vertex(VertexSpec::new(&output, protocol, VertexRole::Egress));
    for w in &ws {
        spec = spec.edge(&input, w);
    }
    for a in &ws {
        for b in &ws {
            spec = spec.edge(a, b);
        }
        spec = spec.edge(a, &output);
    }
    spec
}

fn id_of(v: &Value) -> Result<&str, String> {
    v.as_str().ok_or_else(|| format!("vertex id must be a string, got {v}"))
}

/// Ingress of graph jobs: routes `[id]` and `[src, dst, weight]` records to
/// the owners of their endpoints, `[id, x]` records to the owner of `id`.
pub(crate) struct GraphLoader {
    workers: usize,
}

impl GraphLoader {
    pub(crate) fn new(init: &VertexInit) -> Self {
        Self { workers: init.param_int("workers").unwrap_or(1).max(1) as usize }
    }
}

impl VertexLogic for GraphLoader {
    fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if msg.is_eos() {
            ctx.finish();
            return Ok(());
        }
        let p = &msg.payload;
        match p.len() {
            1 | 2 => ctx.emit(owner_of(id_of(&p[0])?, self.workers), p.clone()),
            3 => {
                let a = owner_of(id_of(&p[0])?, self.workers);
                let b = owner_of(id_of(&p[1])?, self.workers);
                ctx.emit(a, p.clone());
                if b != a {
                    ctx.emit(b, p.clone());
                }
            }
            n => return Err(format!("graph record of arity {n}")),
        }
        Ok(())
    }
}

/// Egress of graph jobs: splits batched payloads into records of `arity`
/// values and closes once every upstream worker has.
pub(crate) struct RecordSink {
    arity: usize,
    eos: EosCounter,
}

impl RecordSink {
    pub(crate) fn new(arity: usize) -> Self {
        Self { arity, eos: EosCounter::default() }
    }
}

impl VertexLogic for RecordSink {
    fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if msg.is_eos() {
            if self.eos.observe(ctx.upstream_count()) {
                ctx.finish();
            }
            return Ok(());
        }
        for r in msg.records(self.arity) {
            ctx.output(r.to_vec());
        }
        Ok(())
    }
}

/// The part of the graph a worker owns.
#[derive(Clone, Debug, Default)]
pub(crate) struct LocalGraph {
    pub vertices: BTreeSet<String>,
    /// Out-edges of owned vertices, weight per neighbor.
    pub out: BTreeMap<String, BTreeMap<String, i64>>,
    /// Undirected neighbors of owned vertices.
    pub nbrs: BTreeMap<String, BTreeSet<String>>,
}

impl LocalGraph {
    /// Applies a loader record. Returns false for records that are not
    /// structural (relaxation seeds and the like).
    pub(crate) fn load(&mut self, rec: &[Value], me: usize, workers: usize) -> Result<bool, String> {
        match rec.len() {
            1 => {
                let id = id_of(&rec[0])?;
                self.vertices.insert(id.to_string());
                self.out.entry(id.to_string()).or_default();
                self.nbrs.entry(id.to_string()).or_default();
                Ok(true)
            }
            3 => {
                let (s, d) = (id_of(&rec[0])?, id_of(&rec[1])?);
                let w = rec[2].as_int().ok_or("edge weight must be an integer")?;
                if owner_of(s, workers) == me {
                    self.vertices.insert(s.to_string());
                    let e = self.out.entry(s.to_string()).or_default().entry(d.to_string()).or_insert(w);
                    *e = (*e).min(w);
                    self.nbrs.entry(s.to_string()).or_default().insert(d.to_string());
                }
                if owner_of(d, workers) == me {
                    self.vertices.insert(d.to_string());
                    self.out.entry(d.to_string()).or_default();
                    self.nbrs.entry(d.to_string()).or_default().insert(s.to_string());
                }
                Ok(true)
            }
            _ => Ok(false),
        }
    }
}

/// Every protocol the graph models define, plus `identity`.
pub fn model_registry() -> ProtocolRegistry {
    let mut r = ProtocolRegistry::new();
    r.register(identity_protocol()).expect("fresh registry");
    r.register(pagerank_protocol()).expect("fresh registry");
    r.register(wcc_protocol()).expect("fresh registry");
    r.register(sssp_protocol(SsspScheduler::Fifo)).expect("fresh registry");
    r.register(sssp_protocol(SsspScheduler::Priority)).expect("fresh registry");
    r.register(mapreduce_protocol(wordcount_job())).expect("fresh registry");
    r.register(mapreduce_protocol(edgecount_job())).expect("fresh registry");
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{DataKey, VersionedStore};

    #[test]
    fn snapshot_extraction() {
        let mut s: VersionedStore<Value> = VersionedStore::new();
        let v = |q| Version::new(0, q);
        s.apply(DataKey::exists(EntityId::node("a")), v(0), Some(true.into())).unwrap();
        s.apply(DataKey::field(EntityId::node("a"), "name"), v(1), Some("A".into())).unwrap();
        s.apply(DataKey::exists(EntityId::node("b")), v(2), Some(true.into())).unwrap();
        let e = EntityId::edge("a", "b", "knows");
        s.apply(DataKey::exists(e.clone()), v(3), Some(true.into())).unwrap();
        s.apply(DataKey::field(e.clone(), "weight"), v(4), Some(Value::Int(3))).unwrap();
        s.apply(DataKey::exists(e.clone()), v(5), None).unwrap();
        s.apply(DataKey::field(e, "weight"), v(6), None).unwrap();
        let g4 = GraphSnapshot::from_handle(&s.snapshot(v(4)));
        assert_eq!(g4.nodes["a"]["name"], Value::from("A"));
        assert_eq!(g4.edges()[&("a".to_string(), "b".to_string())], 3);
        let g6 = GraphSnapshot::from_handle(&s.snapshot(v(6)));
        assert!(g6.links.is_empty());
        assert_eq!(g6.degrees()["a"], 0);
    }

    #[test]
    fn result_export_format() {
        let r = AlgoResult::from([("a".to_string(), Value::Float(0.5))]);
        assert_eq!(export_result(&r), "{\"vertex\":\"a\",\"value\":0.5}\n");
    }
}
