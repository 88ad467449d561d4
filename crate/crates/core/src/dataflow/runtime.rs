//! The seeded event loop driving a dataflow graph.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use indexmap::IndexSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::causal::{CausalEvent, EventKind};
use super::graph::{DataflowGraph, VertexRole};
use super::{
    eos_meta, DataflowError, InputScheduler, Message, Meta, OutputScheduler, Payload, PriorityFn, VertexInit,
    VertexLogic,
};

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub seed: u64,
    pub step_budget: u64,
    /// Record the causal event trace.
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: 0, step_budget: 1_000_000, trace: true }
    }
}

impl RunOptions {
    pub fn seeded(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub steps: u64,
    pub vertex_steps: BTreeMap<String, u64>,
    /// Messages per queue, keyed `from->to`.
    pub edge_messages: BTreeMap<String, u64>,
    /// Messages saved by output batching.
    pub batched: u64,
}

impl RunStats {
    /// Steps taken by internal vertices.
    pub fn internal_steps(&self, graph: &DataflowGraph) -> u64 {
        self.vertex_steps
            .iter()
            .filter(|(v, _)| graph.index_of(v).is_some_and(|i| graph.role(i) == VertexRole::Internal))
            .map(|(_, c)| *c)
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Records handed to external consumers, as (egress vertex, payload).
    pub outputs: Vec<(String, Payload)>,
    pub trace: Vec<CausalEvent>,
    pub stats: RunStats,
}

/// The handler's view of one step.
pub struct StepContext<'a> {
    vertex: &'a str,
    role: VertexRole,
    downstream: &'a [String],
    upstream: usize,
    sender: Option<&'a str>,
    emissions: Vec<(usize, Payload, Meta)>,
    outputs: Vec<(Payload, bool)>,
    events: Vec<(String, Payload)>,
    fault: Option<String>,
}

impl<'a> StepContext<'a> {
    pub fn vertex_id(&self) -> &str {
        self.vertex
    }

    pub fn role(&self) -> VertexRole {
        self.role
    }

    /// Downstream vertex ids in port order.
    pub fn downstream(&self) -> &[String] {
        self.downstream
    }

    pub fn port_of(&self, vertex: &str) -> Option<usize> {
        self.downstream.iter().position(|d| d == vertex)
    }

    /// Number of producers whose end-of-stream this vertex should expect.
    pub fn upstream_count(&self) -> usize {
        self.upstream
    }

    /// The vertex that sent the current message; `None` for external input.
    pub fn sender(&self) -> Option<&str> {
        self.sender
    }

    pub fn emit(&mut self, port: usize, payload: Payload) {
        self.emit_meta(port, payload, Meta::new());
    }

    pub fn emit_meta(&mut self, port: usize, payload: Payload, meta: Meta) {
        if port >= self.downstream.len() {
            self.fault.get_or_insert_with(|| format!("emit on port {port} of {}", self.downstream.len()));
            return;
        }
        self.emissions.push((port, payload, meta));
    }

    pub fn emit_to(&mut self, vertex: &str, payload: Payload, meta: Meta) {
        match self.port_of(vertex) {
            Some(p) => self.emit_meta(p, payload, meta),
            None => {
                self.fault.get_or_insert_with(|| format!("no queue to {vertex}"));
            }
        }
    }

    /// Sends to every port, or to the consumer at an egress vertex.
    pub fn forward(&mut self, payload: Payload, meta: Meta) {
        if self.role == VertexRole::Egress {
            self.outputs.push((payload, false));
        } else {
            for port in 0..self.downstream.len() {
                self.emit_meta(port, payload.clone(), meta.clone());
            }
        }
    }

    pub fn output(&mut self, payload: Payload) {
        if self.role != VertexRole::Egress {
            self.fault.get_or_insert_with(|| "only egress vertices produce external output".into());
            return;
        }
        self.outputs.push((payload, false));
    }

    /// Signals end of stream to every downstream port (or consumer).
    pub fn finish(&mut self) {
        if self.role == VertexRole::Egress {
            self.outputs.push((Vec::new(), true));
        } else {
            for port in 0..self.downstream.len() {
                self.emit_meta(port, Vec::new(), eos_meta());
            }
        }
    }

    pub fn event(&mut self, label: impl Into<String>, payload: Payload) {
        self.events.push((label.into(), payload));
    }
}

struct Envelope {
    msg: Message,
    sender: Option<usize>,
}

enum Inbox {
    Fifo(VecDeque<Envelope>),
    Priority { key: PriorityFn, heap: BinaryHeap<Reverse<(i64, u64)>>, slots: BTreeMap<u64, Envelope> },
}

impl Inbox {
    fn new(policy: &InputScheduler) -> Self {
        match policy {
            InputScheduler::Fifo => Inbox::Fifo(VecDeque::new()),
            InputScheduler::Priority(key) => {
                Inbox::Priority { key: key.clone(), heap: BinaryHeap::new(), slots: BTreeMap::new() }
            }
        }
    }

    fn push(&mut self, env: Envelope, arrival: u64) {
        match self {
            Inbox::Fifo(q) => q.push_back(env),
            Inbox::Priority { key, heap, slots } => {
                heap.push(Reverse((key(&env.msg), arrival)));
                slots.insert(arrival, env);
            }
        }
    }

    fn pop(&mut self) -> Option<Envelope> {
        match self {
            Inbox::Fifo(q) => q.pop_front(),
            Inbox::Priority { heap, slots, .. } => {
                let Reverse((_, arrival)) = heap.pop()?;
                slots.remove(&arrival)
            }
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Inbox::Fifo(q) => q.is_empty(),
            Inbox::Priority { slots, .. } => slots.is_empty(),
        }
    }
}

struct VertexRt {
    logic: Box<dyn VertexLogic>,
    inbox: Inbox,
    clock: u64,
    vc: Vec<u64>,
    downstream_ids: Vec<String>,
    downstream: Vec<usize>,
    out_edges: Vec<usize>,
    upstream: usize,
}

/// Picks the next vertex to step. Uses only the ready set and the RNG, so
/// scheduling cannot depend on any other runtime state.
pub fn pick_ready(ready: &IndexSet<usize>, rng: &mut ChaCha8Rng) -> usize {
    *ready.get_index(rng.gen_range(0..ready.len())).expect("non-empty ready set")
}

struct Loop<'g> {
    graph: &'g DataflowGraph,
    vertices: Vec<VertexRt>,
    ready: IndexSet<usize>,
    arrivals: u64,
    trace: Vec<CausalEvent>,
    record: bool,
    next_event: u64,
    stats: RunStats,
    outputs: Vec<(String, Payload)>,
}

impl Loop<'_> {
    fn enqueue(&mut self, to: usize, env: Envelope) {
        let arrival = self.arrivals;
        self.arrivals += 1;
        self.vertices[to].inbox.push(env, arrival);
        self.ready.insert(to);
    }

    fn event(&mut self, v: usize, t: u64, kind: EventKind, step: u64, payload: Payload, vc: &Arc<Vec<u64>>) {
        if self.record {
            self.trace.push(CausalEvent {
                id: self.next_event,
                vertex: self.graph.vertex_id(v).to_string(),
                t,
                kind,
                protocol: Arc::from(self.graph.protocol(v).id.as_str()),
                vertex_index: v,
                step,
                payload,
                vc: vc.clone(),
            });
        }
        self.next_event += 1;
    }

    fn step(&mut self, v: usize, step: u64) -> Result<(), DataflowError> {
        let env = self.vertices[v].inbox.pop().expect("ready vertex has a message");
        if self.vertices[v].inbox.is_empty() {
            self.ready.swap_remove(&v);
        }
        let rt = &mut self.vertices[v];
        rt.clock = rt.clock.max(env.msg.timestamp) + 1;
        for (mine, theirs) in rt.vc.iter_mut().zip(env.msg.vc.iter()) {
            *mine = (*mine).max(*theirs);
        }
        rt.vc[v] += 1;
        let clock = rt.clock;
        let vc = Arc::new(rt.vc.clone());
        let vertex_id = self.graph.vertex_id(v);
        *self.stats.vertex_steps.entry(vertex_id.to_string()).or_default() += 1;

        let sender_id = env.sender.map(|s| self.graph.vertex_id(s));
        let mut ctx = StepContext {
            vertex: vertex_id,
            role: self.graph.role(v),
            downstream: &rt.downstream_ids,
            upstream: rt.upstream,
            sender: sender_id,
            emissions: Vec::new(),
            outputs: Vec::new(),
            events: Vec::new(),
            fault: None,
        };
        let res = rt.logic.on_message(&env.msg, &mut ctx);
        let fault = res.err().or(ctx.fault.take());
        if let Some(message) = fault {
            return Err(DataflowError::HandlerFault { vertex: vertex_id.to_string(), message });
        }
        let StepContext { emissions, outputs, events, .. } = ctx;
        let record_payload = if self.record { env.msg.payload.clone() } else { Vec::new() };
        self.event(v, clock, EventKind::Receive, step, record_payload, &vc);

        let protocol = self.graph.protocol(v).clone();
        let emissions =
            if protocol.output == OutputScheduler::BatchByDestination && self.graph.role(v) == VertexRole::Internal {
                let before = emissions.len();
                let merged = batch(emissions);
                self.stats.batched += (before - merged.len()) as u64;
                merged
            } else {
                emissions
            };
        let proto_id: Arc<str> = Arc::from(protocol.id.as_str());
        for (port, payload, meta) in emissions {
            let to = self.vertices[v].downstream[port];
            let edge = self.vertices[v].out_edges[port];
            let e = &self.graph.spec.edges[edge];
            *self.stats.edge_messages.entry(format!("{}->{}", e.from, e.to)).or_default() += 1;
            let payload_copy = if self.record { payload.clone() } else { Vec::new() };
            self.event(v, clock, EventKind::Send, step, payload_copy, &vc);
            let msg = Message { protocol: proto_id.clone(), payload, meta, timestamp: clock, vc: vc.clone() };
            self.enqueue(to, Envelope { msg, sender: Some(v) });
        }
        for (payload, eos) in outputs {
            match self.graph.stitch_out.get(&v).copied() {
                Some(ingress) => {
                    let payload = if eos {
                        payload
                    } else {
                        let target = self.graph.protocol(ingress);
                        target
                            .codec
                            .decode(&protocol.codec.encode(&payload))
                            .map_err(|message| DataflowError::HandlerFault { vertex: vertex_id.to_string(), message })?
                    };
                    let meta = if eos { eos_meta() } else { Meta::new() };
                    let e = format!("{}->{}", vertex_id, self.graph.vertex_id(ingress));
                    *self.stats.edge_messages.entry(e).or_default() += 1;
                    let payload_copy = if self.record { payload.clone() } else { Vec::new() };
                    self.event(v, clock, EventKind::Send, step, payload_copy, &vc);
                    let msg = Message { protocol: proto_id.clone(), payload, meta, timestamp: clock, vc: vc.clone() };
                    self.enqueue(ingress, Envelope { msg, sender: Some(v) });
                }
                None if eos => {}
                None => {
                    let payload_copy = if self.record { payload.clone() } else { Vec::new() };
                    self.event(v, clock, EventKind::Output, step, payload_copy, &vc);
                    self.outputs.push((vertex_id.to_string(), payload));
                }
            }
        }
        for (label, payload) in events {
            self.event(v, clock, EventKind::Custom(label), step, payload, &vc);
        }
        Ok(())
    }
}

/// Concatenates same-port, same-metadata emissions in first-seen order.
fn batch(emissions: Vec<(usize, Payload, Meta)>) -> Vec<(usize, Payload, Meta)> {
    let mut out: Vec<(usize, Payload, Meta)> = Vec::new();
    for (port, payload, meta) in emissions {
        match out.iter_mut().find(|(p, _, m)| *p == port && *m == meta) {
            Some((_, acc, _)) => acc.extend(payload),
            None => out.push((port, payload, meta)),
        }
    }
    out
}

/// Runs `graph` to quiescence. `inputs` are (ingress vertex, record) pairs;
/// every external ingress receives an end-of-stream marker after its last
/// record.
pub fn run(graph: &DataflowGraph, inputs: &[(String, Payload)], opts: RunOptions) -> Result<RunOutput, DataflowError> {
    let n = graph.vertex_count();
    let vertices = (0..n)
        .map(|i| {
            let spec = &graph.spec.vertices[i];
            let downstream = graph.downstream(i);
            let downstream_ids: Vec<String> = downstream.iter().map(|&d| graph.vertex_id(d).to_string()).collect();
            let upstream_ids: Vec<String> = graph.upstream(i).iter().map(|&u| graph.vertex_id(u).to_string()).collect();
            let init = VertexInit {
                id: spec.id.clone(),
                role: spec.role,
                params: spec.params.clone(),
                upstream: upstream_ids.clone(),
                downstream: downstream_ids.clone(),
            };
            let protocol = graph.protocol(i);
            VertexRt {
                logic: protocol.instantiate(&init),
                inbox: Inbox::new(&protocol.input),
                clock: 0,
                vc: vec![0; n],
                downstream_ids,
                downstream,
                out_edges: graph.out_edges[i].clone(),
                upstream: if spec.role == VertexRole::Ingress { 1 } else { upstream_ids.len() },
            }
        })
        .collect();
    let mut lp = Loop {
        graph,
        vertices,
        ready: IndexSet::new(),
        arrivals: 0,
        trace: Vec::new(),
        record: opts.trace,
        next_event: 0,
        stats: RunStats::default(),
        outputs: Vec::new(),
    };
    let zero = Arc::new(vec![0; n]);
    let external: Vec<usize> =
        graph.external_ingresses().iter().map(|id| graph.index_of(id).expect("ingress")).collect();
    for (target, payload) in inputs {
        let to = graph
            .index_of(target)
            .filter(|i| external.contains(i))
            .ok_or_else(|| DataflowError::UnknownVertex(target.clone()))?;
        let msg = Message {
            protocol: Arc::from(graph.protocol(to).id.as_str()),
            payload: payload.clone(),
            meta: Meta::new(),
            timestamp: 0,
            vc: zero.clone(),
        };
        lp.enqueue(to, Envelope { msg, sender: None });
    }
    for &to in &external {
        let msg = Message {
            protocol: Arc::from(graph.protocol(to).id.as_str()),
            payload: Vec::new(),
            meta: eos_meta(),
            timestamp: 0,
            vc: zero.clone(),
        };
        lp.enqueue(to, Envelope { msg, sender: None });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut steps = 0u64;
    while !lp.ready.is_empty() {
        if steps >= opts.step_budget {
            return Err(DataflowError::StepBudgetExceeded { budget: opts.step_budget });
        }
        let v = pick_ready(&lp.ready, &mut rng);
        lp.step(v, steps)?;
        steps += 1;
    }
    lp.stats.steps = steps;
    Ok(RunOutput { outputs: lp.outputs, trace: lp.trace, stats: lp.stats })
}

/// Runs a graph with a single external ingress.
pub fn run_single(graph: &DataflowGraph, records: Vec<Payload>, opts: RunOptions) -> Result<RunOutput, DataflowError> {
    let ingress = graph
        .external_ingresses()
        .first()
        .map(|s| s.to_string())
        .ok_or_else(|| DataflowError::NoIngress("no external ingress".into()))?;
    let inputs: Vec<(String, Payload)> = records.into_iter().map(|r| (ingress.clone(), r)).collect();
    run(graph, &inputs, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::causal::{deliver_events, happened_before, Relation};
    use crate::dataflow::graph::{GraphSpec, VertexSpec};
    use crate::dataflow::{identity_protocol, Forward, Protocol, ProtocolRegistry};
    use crate::types::Value;

    fn registry() -> ProtocolRegistry {
        let mut r = ProtocolRegistry::new();
        r.register(identity_protocol()).unwrap();
        r
    }

    fn ints(xs: &[i64]) -> Vec<Payload> {
        xs.iter().map(|x| vec![Value::Int(*x)]).collect()
    }

    fn fan_graph() -> GraphSpec {
        GraphSpec::default()
            .vertex(VertexSpec::new("in", "identity", VertexRole::Ingress))
            .vertex(VertexSpec::new("a", "identity", VertexRole::Internal))
            .vertex(VertexSpec::new("b", "identity", VertexRole::Internal))
            .vertex(VertexSpec::new("out", "identity", VertexRole::Egress))
            .edge("in", "a")
            .edge("in", "b")
            .edge("a", "out")
            .edge("b", "out")
    }

    #[test]
    fn identity_pipeline() {
        let spec = GraphSpec::default()
            .vertex(VertexSpec::new("in", "identity", VertexRole::Ingress))
            .vertex(VertexSpec::new("id", "identity", VertexRole::Internal))
            .vertex(VertexSpec::new("out", "identity", VertexRole::Egress))
            .edge("in", "id")
            .edge("id", "out");
        let g = DataflowGraph::build(spec, &registry()).unwrap();
        let out = run_single(&g, ints(&[1, 2, 3]), RunOptions::seeded(3)).unwrap();
        let got: Vec<Payload> = out.outputs.into_iter().map(|(_, p)| p).collect();
        assert_eq!(got, ints(&[1, 2, 3]));
    }

    #[test]
    fn seeds_change_interleaving_not_confluent_results() {
        let g = DataflowGraph::build(fan_graph(), &registry()).unwrap();
        let mut multisets = Vec::new();
        let mut orders = std::collections::BTreeSet::new();
        for seed in 0..8 {
            let out = run_single(&g, ints(&[1, 2, 3, 4]), RunOptions::seeded(seed)).unwrap();
            let mut vals: Vec<i64> = out.outputs.iter().map(|(_, p)| p[0].as_int().unwrap()).collect();
            orders.insert(vals.clone());
            vals.sort();
            multisets.push(vals);
        }
        assert!(multisets.windows(2).all(|w| w[0] == w[1]));
        assert!(orders.len() > 1);
    }

    #[test]
    fn same_seed_same_trace() {
        let g = DataflowGraph::build(fan_graph(), &registry()).unwrap();
        let a = run_single(&g, ints(&[5, 6]), RunOptions::seeded(11)).unwrap();
        let b = run_single(&g, ints(&[5, 6]), RunOptions::seeded(11)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.outputs, b.outputs);
    }

    #[test]
    fn non_converging_loop_hits_budget() {
        let spec = GraphSpec::default()
            .vertex(VertexSpec::new("in", "identity", VertexRole::Ingress))
            .vertex(VertexSpec::new("a", "identity", VertexRole::Internal))
            .vertex(VertexSpec::new("b", "identity", VertexRole::Internal))
            .vertex(VertexSpec::new("out", "identity", VertexRole::Egress))
            .edge("in", "a")
            .edge("a", "b")
            .edge("b", "a")
            .edge("b", "out");
        let g = DataflowGraph::build(spec, &registry()).unwrap();
        let opts = RunOptions { seed: 0, step_budget: 1_000_000, trace: false };
        assert_eq!(
            run_single(&g, ints(&[1]), opts).unwrap_err(),
            DataflowError::StepBudgetExceeded { budget: 1_000_000 }
        );
    }

    #[test]
    fn lamport_rule_and_delivery() {
        let g = DataflowGraph::build(fan_graph(), &registry()).unwrap();
        let out = run_single(&g, ints(&[1, 2, 3]), RunOptions::seeded(5)).unwrap();
        for a in &out.trace {
            for b in &out.trace {
                if happened_before(a, b) {
                    assert!(a.t < b.t, "{a:?} {b:?}");
                }
            }
        }
        let order = deliver_events(&out.trace, &Relation::HappenedBefore).unwrap();
        let pos: BTreeMap<u64, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        for a in &out.trace {
            for b in &out.trace {
                if happened_before(a, b) {
                    assert!(pos[&a.id] < pos[&b.id]);
                }
            }
        }
    }

    struct Stamp;

    impl VertexLogic for Stamp {
        fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
            if !msg.is_eos() {
                ctx.event("clock", vec![Value::Int(msg.timestamp as i64)]);
                ctx.forward(msg.payload.clone(), Meta::new());
            }
            Ok(())
        }
    }

    #[test]
    fn clock_takes_max_plus_one() {
        let mut r = registry();
        r.register(Protocol::new("stamp", |_| Box::new(Stamp))).unwrap();
        let spec = GraphSpec::default()
            .vertex(VertexSpec::new("in", "identity", VertexRole::Ingress))
            .vertex(VertexSpec::new("s", "stamp", VertexRole::Internal))
            .vertex(VertexSpec::new("out", "identity", VertexRole::Egress))
            .edge("in", "s")
            .edge("s", "out");
        let g = DataflowGraph::build(spec, &r).unwrap();
        let out = run_single(&g, ints(&[1, 2]), RunOptions::seeded(0)).unwrap();
        for e in out.trace.iter().filter(|e| e.kind == EventKind::Send) {
            let recv = out.trace.iter().find(|r| r.step == e.step && r.kind == EventKind::Receive).unwrap();
            assert_eq!(e.t, recv.t);
        }
        let s_recv: Vec<u64> =
            out.trace.iter().filter(|e| e.vertex == "s" && e.kind == EventKind::Receive).map(|e| e.t).collect();
        assert!(s_recv.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn fifo_takes_earliest_arrival_priority_takes_min_key() {
        let mut fifo = Inbox::new(&InputScheduler::Fifo);
        let mut prio = Inbox::new(&InputScheduler::Priority(Arc::new(|m: &Message| m.payload[0].as_int().unwrap())));
        for (i, x) in [5i64, 1, 1, 3].iter().enumerate() {
            let msg = Message {
                protocol: Arc::from("p"),
                payload: vec![Value::Int(*x)],
                meta: Meta::new(),
                timestamp: 0,
                vc: Arc::new(vec![]),
            };
            fifo.push(Envelope { msg: msg.clone(), sender: Some(i) }, i as u64);
            prio.push(Envelope { msg, sender: Some(i) }, i as u64);
        }
        let f: Vec<usize> = std::iter::from_fn(|| fifo.pop()).map(|e| e.sender.unwrap()).collect();
        let p: Vec<usize> = std::iter::from_fn(|| prio.pop()).map(|e| e.sender.unwrap()).collect();
        assert_eq!(f, vec![0, 1, 2, 3]);
        assert_eq!(p, vec![1, 2, 3, 0]);
    }

    #[test]
    fn pick_depends_only_on_ready_set_and_rng() {
        let ready: IndexSet<usize> = [4, 1, 9].into_iter().collect();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(pick_ready(&ready, &mut r1), pick_ready(&ready, &mut r2));
        }
    }

    #[test]
    fn batching_merges_same_port_emissions() {
        struct Twice;
        impl VertexLogic for Twice {
            fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
                if msg.is_eos() {
                    ctx.finish();
                } else {
                    ctx.emit(0, msg.payload.clone());
                    ctx.emit(0, msg.payload.clone());
                }
                Ok(())
            }
        }
        let mut r = registry();
        r.register(Protocol::new("twice", |_| Box::new(Twice)).output(OutputScheduler::BatchByDestination)).unwrap();
        let spec = GraphSpec::default()
            .vertex(VertexSpec::new("in", "identity", VertexRole::Ingress))
            .vertex(VertexSpec::new("t", "twice", VertexRole::Internal))
            .vertex(VertexSpec::new("out", "identity", VertexRole::Egress))
            .edge("in", "t")
            .edge("t", "out");
        let g = DataflowGraph::build(spec, &r).unwrap();
        let out = run_single(&g, ints(&[7]), RunOptions::default()).unwrap();
        assert_eq!(out.outputs, vec![("out".to_string(), vec![Value::Int(7), Value::Int(7)])]);
        assert_eq!(out.stats.batched, 1);
        assert_eq!(out.stats.edge_messages["t->out"], 2);
        let _ = Forward::default();
    }

    #[test]
    fn handler_fault_names_vertex() {
        struct Boom;
        impl VertexLogic for Boom {
            fn on_message(&mut self, _: &Message, _: &mut StepContext<'_>) -> Result<(), String> {
                Err("boom".into())
            }
        }
        let mut r = registry();
        r.register(Protocol::new("boom", |_| Box::new(Boom))).unwrap();
        let spec = GraphSpec::default()
            .vertex(VertexSpec::new("in", "identity", VertexRole::Ingress))
            .vertex(VertexSpec::new("x", "boom", VertexRole::Internal))
            .vertex(VertexSpec::new("out", "identity", VertexRole::Egress))
            .edge("in", "x")
            .edge("x", "out");
        let g = DataflowGraph::build(spec, &r).unwrap();
        let err = run_single(&g, ints(&[1]), RunOptions::default()).unwrap_err();
        assert_eq!(err, DataflowError::HandlerFault { vertex: "x".into(), message: "boom".into() });
    }
}
