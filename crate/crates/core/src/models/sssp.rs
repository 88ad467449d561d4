//! Asynchronous single-source shortest paths.
//!
//! There are no barriers: a worker relaxes every distance it receives and
//! forwards improvements along its out-edges. Distances only decrease and
//! every improvement is propagated, so at quiescence each vertex holds its
//! shortest distance whatever order messages were processed in. The input
//! scheduler only changes how much redundant work is done: with the
//! priority scheduler a worker always relaxes its smallest pending distance
//! first, as Dijkstra's algorithm would.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::dataflow::{
    DataflowGraph, InputScheduler, Message, Meta, OutputScheduler, Protocol, StepContext, VertexInit, VertexLogic,
    VertexRole,
};
use crate::types::{Value, ValueKind};

use super::{
    owner_of, worker_graph, AlgoResult, GraphLoader, GraphSnapshot, JobConfig, LocalGraph, ModelError, RecordSink,
};

pub const SSSP_FIFO: &str = "async-sssp-fifo";
pub const SSSP_PRIORITY: &str = "async-sssp-priority";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsspScheduler {
    Fifo,
    Priority,
}

impl SsspScheduler {
    pub fn protocol_id(self) -> &'static str {
        match self {
            SsspScheduler::Fifo => SSSP_FIFO,
            SsspScheduler::Priority => SSSP_PRIORITY,
        }
    }
}

struct SsspWorker {
    me: usize,
    workers: usize,
    peer_ports: Vec<usize>,
    out_port: usize,
    graph: LocalGraph,
    dist: BTreeMap<String, i64>,
}

impl SsspWorker {
    fn new(init: &VertexInit) -> Self {
        let workers = init.param_int("workers").unwrap_or(1).max(1) as usize;
        let prefix = init.id.rsplit_once('w').map_or("", |(p, _)| p);
        let port = |name: String| init.downstream.iter().position(|d| *d == name).unwrap_or(usize::MAX);
        Self {
            me: init.param_int("index").unwrap_or(0) as usize,
            workers,
            peer_ports: (0..workers).map(|i| port(format!("{prefix}w{i}"))).collect(),
            out_port: port(format!("{prefix}out")),
            graph: LocalGraph::default(),
            dist: BTreeMap::new(),
        }
    }

    fn relax(&mut self, v: &str, d: i64, ctx: &mut StepContext<'_>) {
        if self.dist.get(v).is_some_and(|cur| *cur <= d) {
            return;
        }
        self.dist.insert(v.to_string(), d);
        ctx.emit(self.out_port, vec![Value::from(v), Value::Int(d)]);
        if let Some(out) = self.graph.out.get(v) {
            for (u, w) in out {
                let port = self.peer_ports[owner_of(u, self.workers)];
                ctx.emit(port, vec![Value::from(u.as_str()), Value::Int(d + w)]);
            }
        }
    }
}

impl VertexLogic for SsspWorker {
    fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if msg.is_eos() {
            return Ok(());
        }
        for r in msg.records(msg.payload.len().max(1)) {
            if !self.graph.load(r, self.me, self.workers)? {
                let v = r[0].as_str().ok_or("relaxation target must be a string")?;
                let d = r[1].as_int().ok_or("distance must be an integer")?;
                self.relax(v, d, ctx);
            }
        }
        Ok(())
    }
}

/// Pending relaxations order by distance; structure records go first.
fn relaxation_key(m: &Message) -> i64 {
    match m.payload.as_slice() {
        [_, Value::Int(d)] => *d,
        _ => i64::MIN,
    }
}

pub fn sssp_protocol(scheduler: SsspScheduler) -> Protocol {
    let input = match scheduler {
        SsspScheduler::Fifo => InputScheduler::Fifo,
        SsspScheduler::Priority => InputScheduler::Priority(Arc::new(relaxation_key)),
    };
    Protocol::new(scheduler.protocol_id(), |init: &VertexInit| -> Box<dyn VertexLogic> {
        match init.role {
            VertexRole::Ingress => Box::new(GraphLoader::new(init)),
            VertexRole::Egress => Box::new(RecordSink::new(2)),
            VertexRole::Internal => Box::new(SsspWorker::new(init)),
        }
    })
    .input(input)
    .output(OutputScheduler::Passthrough)
    .confluent(true)
    .shapes(vec![ValueKind::String, ValueKind::String, ValueKind::Integer], vec![ValueKind::String, ValueKind::Integer])
    .samples(vec![vec![Value::from("a"), Value::Int(3)]])
}

/// Shortest distances from `source`; unreachable vertices are absent.
pub fn sssp(
    graph: &GraphSnapshot,
    source: &str,
    scheduler: SsspScheduler,
    job: &JobConfig,
) -> Result<(AlgoResult, crate::dataflow::RunOutput), ModelError> {
    if !graph.nodes.contains_key(source) {
        return Err(ModelError::UnknownSource(source.to_string()));
    }
    let edges = graph.edges();
    if let Some(((s, d), w)) = edges.iter().find(|(_, w)| **w < 0) {
        return Err(ModelError::NegativeWeight { src: s.clone(), dst: d.clone(), weight: *w });
    }
    let spec = worker_graph("", scheduler.protocol_id(), job.workers, &Meta::new());
    let g = DataflowGraph::build(spec, &super::model_registry())?;
    let mut records = graph.records();
    records.push(vec![Value::from(source), Value::Int(0)]);
    let out = crate::dataflow::run_single(&g, records, job.run_options())?;
    let mut result = AlgoResult::new();
    for (_, p) in &out.outputs {
        let (Some(v), Some(d)) = (p[0].as_str(), p[1].as_int()) else { continue };
        let e = result.entry(v.to_string()).or_insert(Value::Int(d));
        if e.as_int().is_some_and(|cur| d < cur) {
            *e = Value::Int(d);
        }
    }
    Ok((result, out))
}
