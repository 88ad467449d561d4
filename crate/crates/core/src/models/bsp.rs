//! Vertex-centric BSP without a central scheduler.
//!
//! Workers agree on superstep boundaries by exchanging exactly one message
//! per peer per superstep over the FIFO mesh, each stamped with its
//! superstep number. A worker completes superstep `s` once it holds all `M`
//! messages stamped `s`; messages for later supersteps wait in its buffer.
//! Superstep 0 exchanges local vertex counts so every worker learns `N`.

use std::collections::{BTreeMap, BTreeSet};

use crate::dataflow::{
    eos_meta, DataflowGraph, Message, Meta, OutputScheduler, Payload, Protocol, StepContext, VertexInit, VertexLogic,
    VertexRole,
};
use crate::types::{Value, ValueKind};

use super::{
    owner_of, worker_graph, AlgoResult, GraphLoader, GraphSnapshot, JobConfig, LocalGraph, ModelError, RecordSink,
};

pub const PAGERANK: &str = "bsp-pagerank";
pub const WCC: &str = "bsp-wcc";

/// Outgoing records for one superstep, per destination worker.
pub(crate) type Outbox = Vec<Vec<Value>>;

pub(crate) enum Step {
    Continue(Outbox),
    Halt(Vec<Payload>),
}

pub(crate) trait BspProgram: Send {
    /// Records for superstep 1, given the global vertex count.
    fn start(&mut self, g: &LocalGraph, n: u64, workers: usize) -> Outbox;
    /// Consumes every record addressed to this worker in superstep `s`.
    /// `active` is the number of records all workers sent in `s`.
    fn superstep(&mut self, g: &LocalGraph, s: i64, records: Vec<Value>, active: u64, workers: usize) -> Step;
}

struct BspWorker<P> {
    me: usize,
    workers: usize,
    peer_ports: Vec<usize>,
    out_port: usize,
    graph: LocalGraph,
    loaded: bool,
    done: bool,
    superstep: i64,
    buffered: BTreeMap<i64, Vec<(Payload, u64)>>,
    program: P,
}

impl<P: BspProgram> BspWorker<P> {
    fn new(init: &VertexInit, program: P) -> Self {
        let workers = init.param_int("workers").unwrap_or(1).max(1) as usize;
        let prefix = init.id.rsplit_once('w').map_or("", |(p, _)| p);
        let port = |name: String| init.downstream.iter().position(|d| *d == name).unwrap_or(usize::MAX);
        Self {
            me: init.param_int("index").unwrap_or(0) as usize,
            workers,
            peer_ports: (0..workers).map(|i| port(format!("{prefix}w{i}"))).collect(),
            out_port: port(format!("{prefix}out")),
            graph: LocalGraph::default(),
            loaded: false,
            done: false,
            superstep: 0,
            buffered: BTreeMap::new(),
            program,
        }
    }

    fn send(&self, ctx: &mut StepContext<'_>, s: i64, outbox: Outbox) {
        let active: usize = outbox.iter().map(Vec::len).sum();
        for (w, records) in outbox.into_iter().enumerate() {
            let meta =
                Meta::from([("ss".to_string(), Value::Int(s)), ("active".to_string(), Value::Int(active as i64))]);
            ctx.emit_meta(self.peer_ports[w], records, meta);
        }
    }

    fn advance(&mut self, ctx: &mut StepContext<'_>) {
        while self.loaded && !self.done {
            let s = self.superstep;
            if self.buffered.get(&s).map_or(0, Vec::len) < self.workers {
                return;
            }
            let msgs = self.buffered.remove(&s).unwrap_or_default();
            let active: u64 = msgs.iter().map(|(_, a)| a).sum();
            let outbox = if s == 0 {
                let n: u64 = msgs.iter().map(|(p, _)| p.first().and_then(Value::as_int).unwrap_or(0) as u64).sum();
                self.program.start(&self.graph, n, self.workers)
            } else {
                let records: Vec<Value> = msgs.into_iter().flat_map(|(p, _)| p).collect();
                match self.program.superstep(&self.graph, s, records, active, self.workers) {
                    Step::Continue(outbox) => outbox,
                    Step::Halt(results) => {
                        ctx.emit(self.out_port, results.into_iter().flatten().collect());
                        ctx.emit_meta(self.out_port, Vec::new(), eos_meta());
                        self.done = true;
                        return;
                    }
                }
            };
            self.superstep = s + 1;
            self.send(ctx, s + 1, outbox);
        }
    }
}

impl<P: BspProgram> VertexLogic for BspWorker<P> {
    fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if let Some(s) = msg.meta_int("ss") {
            if s < self.superstep {
                return Err(format!("message for superstep {s} arrived in superstep {}", self.superstep));
            }
            let active = msg.meta_int("active").unwrap_or(0) as u64;
            self.buffered.entry(s).or_default().push((msg.payload.clone(), active));
        } else if msg.is_eos() {
            self.loaded = true;
            let count = vec![Value::Int(self.graph.vertices.len() as i64)];
            let outbox = vec![count; self.workers];
            for (w, records) in outbox.into_iter().enumerate() {
                let meta = Meta::from([("ss".to_string(), Value::Int(0)), ("active".to_string(), Value::Int(0))]);
                ctx.emit_meta(self.peer_ports[w], records, meta);
            }
        } else {
            if self.loaded {
                return Err("graph record after end of stream".into());
            }
            self.graph.load(&msg.payload, self.me, self.workers)?;
        }
        self.advance(ctx);
        Ok(())
    }
}

fn bsp_protocol<P: BspProgram + 'static>(id: &str, make: fn(&VertexInit) -> P) -> Protocol {
    Protocol::new(id, move |init: &VertexInit| -> Box<dyn VertexLogic> {
        match init.role {
            VertexRole::Ingress => Box::new(GraphLoader::new(init)),
            VertexRole::Egress => Box::new(RecordSink::new(2)),
            VertexRole::Internal => Box::new(BspWorker::new(init, make(init))),
        }
    })
    .output(OutputScheduler::BatchByDestination)
    .confluent(true)
}

struct PageRank {
    iterations: i64,
    damping: f64,
    n: f64,
    ranks: BTreeMap<String, f64>,
}

impl PageRank {
    fn contributions(&self, g: &LocalGraph, workers: usize) -> Outbox {
        let mut outbox = vec![Vec::new(); workers];
        for (v, r) in &self.ranks {
            let out = &g.out[v];
            if out.is_empty() {
                for records in outbox.iter_mut() {
                    records.extend([Value::Bool(false), Value::from(v.as_str()), Value::Float(*r)]);
                }
            } else {
                let share = r / out.len() as f64;
                for u in out.keys() {
                    outbox[owner_of(u, workers)].extend([
                        Value::from(u.as_str()),
                        Value::from(v.as_str()),
                        Value::Float(share),
                    ]);
                }
            }
        }
        outbox
    }
}

impl BspProgram for PageRank {
    fn start(&mut self, g: &LocalGraph, n: u64, workers: usize) -> Outbox {
        self.n = n as f64;
        self.ranks = g.vertices.iter().map(|v| (v.clone(), 1.0 / self.n)).collect();
        self.contributions(g, workers)
    }

    fn superstep(&mut self, g: &LocalGraph, s: i64, records: Vec<Value>, _: u64, workers: usize) -> Step {
        // Sums run in source-id order so every worker count produces the
        // same bits.
        let mut incoming: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
        let mut dangling: Vec<(&str, f64)> = Vec::new();
        for r in records.chunks(3) {
            let src = r[1].as_str().unwrap_or_default();
            let x = r[2].as_float().unwrap_or(0.0);
            match &r[0] {
                Value::Str(dst) => incoming.entry(dst.as_str()).or_default().push((src, x)),
                _ => dangling.push((src, x)),
            }
        }
        dangling.sort_by(|a, b| a.0.cmp(b.0));
        let dangling_mass: f64 = dangling.iter().map(|(_, x)| x).sum();
        let base = (1.0 - self.damping) / self.n;
        for (v, rank) in self.ranks.iter_mut() {
            let mut parts = incoming.remove(v.as_str()).unwrap_or_default();
            parts.sort_by(|a, b| a.0.cmp(b.0));
            let sum: f64 = parts.iter().map(|(_, x)| x).sum();
            *rank = base + self.damping * (sum + dangling_mass / self.n);
        }
        if s >= self.iterations {
            Step::Halt(self.ranks.iter().map(|(v, r)| vec![Value::from(v.as_str()), Value::Float(*r)]).collect())
        } else {
            Step::Continue(self.contributions(g, workers))
        }
    }
}

pub fn pagerank_protocol() -> Protocol {
    bsp_protocol(PAGERANK, |init| PageRank {
        iterations: init.param_int("iterations").unwrap_or(1),
        damping: init.param_float("damping").unwrap_or(0.85),
        n: 0.0,
        ranks: BTreeMap::new(),
    })
    .shapes(vec![ValueKind::String, ValueKind::String, ValueKind::Integer], vec![ValueKind::String, ValueKind::Float])
    .samples(vec![vec![Value::from("a"), Value::from("b"), Value::Int(1)], vec![Value::from("a"), Value::Float(0.25)]])
}

struct MinLabel {
    labels: BTreeMap<String, String>,
}

impl MinLabel {
    fn announce<'a>(&self, g: &LocalGraph, changed: impl Iterator<Item = &'a String>, workers: usize) -> Outbox {
        let mut outbox = vec![Vec::new(); workers];
        for v in changed {
            let label = &self.labels[v];
            for u in &g.nbrs[v] {
                outbox[owner_of(u, workers)].extend([Value::from(u.as_str()), Value::from(label.as_str())]);
            }
        }
        outbox
    }
}

impl BspProgram for MinLabel {
    fn start(&mut self, g: &LocalGraph, _: u64, workers: usize) -> Outbox {
        self.labels = g.vertices.iter().map(|v| (v.clone(), v.clone())).collect();
        self.announce(g, g.vertices.iter(), workers)
    }

    fn superstep(&mut self, g: &LocalGraph, _: i64, records: Vec<Value>, active: u64, workers: usize) -> Step {
        if active == 0 {
            return Step::Halt(
                self.labels.iter().map(|(v, l)| vec![Value::from(v.as_str()), Value::from(l.as_str())]).collect(),
            );
        }
        let mut changed = BTreeSet::new();
        for r in records.chunks(2) {
            let (Some(v), Some(l)) = (r[0].as_str(), r[1].as_str()) else { continue };
            if let Some(cur) = self.labels.get_mut(v) {
                if l < cur.as_str() {
                    *cur = l.to_string();
                    changed.insert(v.to_string());
                }
            }
        }
        Step::Continue(self.announce(g, changed.iter(), workers))
    }
}

pub fn wcc_protocol() -> Protocol {
    bsp_protocol(WCC, |_| MinLabel { labels: BTreeMap::new() })
        .shapes(
            vec![ValueKind::String, ValueKind::String, ValueKind::Integer],
            vec![ValueKind::String, ValueKind::String],
        )
        .samples(vec![vec![Value::from("a"), Value::from("b")]])
}

fn collect(outputs: Vec<(String, Payload)>, key: impl Fn(&Value) -> Option<Value>) -> AlgoResult {
    outputs.into_iter().filter_map(|(_, p)| Some((p.first()?.as_str()?.to_string(), key(p.get(1)?)?))).collect()
}

/// `iterations` synchronous PageRank rounds with uniform redistribution of
/// dangling mass.
pub fn pagerank(
    graph: &GraphSnapshot,
    iterations: u32,
    damping: f64,
    job: &JobConfig,
) -> Result<(AlgoResult, crate::dataflow::RunOutput), ModelError> {
    if graph.vertex_count() == 0 {
        return Err(ModelError::EmptyGraph);
    }
    if iterations == 0 {
        return Err(ModelError::BadParameter("iterations must be at least 1".into()));
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(ModelError::BadParameter(format!("damping {damping} outside (0, 1)")));
    }
    let params = Meta::from([
        ("iterations".to_string(), Value::Int(iterations as i64)),
        ("damping".to_string(), Value::Float(damping)),
    ]);
    let spec = worker_graph("", PAGERANK, job.workers, &params);
    let g = DataflowGraph::build(spec, &super::model_registry())?;
    let out = crate::dataflow::run_single(&g, graph.records(), job.run_options())?;
    let result = collect(out.outputs.clone(), |v| v.as_float().map(Value::Float));
    Ok((result, out))
}

/// Weakly connected components labelled by their smallest vertex id.
pub fn wcc(graph: &GraphSnapshot, job: &JobConfig) -> Result<(AlgoResult, crate::dataflow::RunOutput), ModelError> {
    let spec = worker_graph("", WCC, job.workers, &Meta::new());
    let g = DataflowGraph::build(spec, &super::model_registry())?;
    let out = crate::dataflow::run_single(&g, graph.records(), job.run_options())?;
    let result = collect(out.outputs.clone(), |v| Some(v.clone()));
    Ok((result, out))
}
