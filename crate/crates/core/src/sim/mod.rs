//! Deterministic cluster simulation.
//!
//! One ingest actor and `machines` data nodes exchange messages over FIFO
//! links with a configurable latency. A single event loop ordered by
//! (tick, sequence number) drives everything; the only randomness comes
//! from a seeded generator, so a run is a pure function of its config,
//! stream and job.

mod gen;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataflow::{
    happened_before, CausalEvent, DataflowError, DataflowGraph, EventKind, Payload, ProtocolRegistry, RunOutput,
};
use crate::models::{self, AlgoResult, GraphSnapshot, JobConfig, ModelError, SsspScheduler};
use crate::replica::{
    CoherenceMode, MonitorReport, PartitionMap, ReplicaConfig, ReplicaError, ReplicaManager, WindowMetrics,
};
use crate::store::{DataKey, SnapshotHandle};
use crate::stream::{parse_stream, IngestError, IngestNode, Ingested, StreamRecord};
use crate::tracker::{
    ConsensusLog, DispatchState, Dispatcher, GlobalProgress, NodeProgress, Outgoing, SealAnnouncement, TrackerError,
};
use crate::types::{EpochId, MachineId, Value, Version};

pub use gen::{gen_stream, GenKind, GenParams, Generated};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("BadConfig: {0}")]
    BadConfig(String),
    #[error("StepBudgetExceeded: simulation stopped after {budget} events")]
    StepBudgetExceeded { budget: u64 },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Replica(#[from] ReplicaError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub machines: usize,
    /// Ticks per hop.
    pub link_latency: u64,
    /// Extra uniform delay in `0..=jitter` ticks per message. FIFO order on
    /// each link is kept regardless.
    pub jitter: u64,
    /// Per-link latency overrides keyed `ingest->2`, `0->ingest`.
    pub link_overrides: BTreeMap<String, u64>,
    /// Ticks a data node spends on one message.
    pub service_ticks: u64,
    /// Ticks between two stream records at the ingest node.
    pub ingest_interval: u64,
    pub seed: u64,
    /// Maximum number of simulation events.
    pub step_budget: u64,
    pub partitions: usize,
    pub alpha: f64,
    pub beta: f64,
    pub swap_ratio: f64,
    /// Ticks per replica-manager access window.
    pub window: u64,
    /// Probability that an ingest tick also issues one snapshot read from
    /// a random machine.
    pub read_rate: f64,
    pub auto_rebalance: bool,
}

impl SimConfig {
    pub fn new(machines: usize, seed: u64) -> Self {
        Self {
            machines,
            link_latency: 1,
            jitter: 0,
            link_overrides: BTreeMap::new(),
            service_ticks: 2,
            ingest_interval: 1,
            seed,
            step_budget: 10_000_000,
            partitions: 64,
            alpha: 1.0,
            beta: 1.0,
            swap_ratio: 2.0,
            window: 64,
            read_rate: 0.25,
            auto_rebalance: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::BadConfig(m.to_string()));
        if self.machines == 0 {
            return bad("machines must be at least 1");
        }
        if self.link_latency == 0 || self.service_ticks == 0 || self.ingest_interval == 0 || self.window == 0 {
            return bad("latency, service, ingest interval and window must be positive");
        }
        if self.partitions == 0 || self.step_budget == 0 {
            return bad("partitions and step budget must be positive");
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.swap_ratio > 0.0) {
            return bad("alpha, beta and swap_ratio must be positive");
        }
        if !(0.0..=1.0).contains(&self.read_rate) {
            return bad("read_rate must lie in [0, 1]");
        }
        for (link, &lat) in &self.link_overrides {
            let ok = link.split_once("->").is_some_and(|(a, b)| {
                let end = |s: &str| s == "ingest" || s.parse::<usize>().is_ok_and(|m| m < self.machines);
                end(a) && end(b)
            });
            if !ok || lat == 0 {
                return bad(&format!("bad link override {link:?}"));
            }
        }
        Ok(())
    }

    fn replica_config(&self) -> ReplicaConfig {
        let mut rc = ReplicaConfig::new(self.machines).with_partitions(self.partitions);
        rc.alpha = self.alpha;
        rc.beta = self.beta;
        rc.swap_ratio = self.swap_ratio;
        rc.mode = CoherenceMode::Propagate;
        rc.propagation_latency = self.link_latency;
        rc.auto_rebalance = self.auto_rebalance;
        rc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(untagged)]
pub enum Endpoint {
    Ingest,
    Node(MachineId),
}

impl Endpoint {
    fn label(self) -> String {
        match self {
            Endpoint::Ingest => "ingest".into(),
            Endpoint::Node(m) => m.to_string(),
        }
    }
}

/// One entry of the simulation trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Dispatch { tick: u64, node: MachineId, version: Version, state: &'static str },
    Send { tick: u64, node: MachineId, version: Version },
    Close { tick: u64, node: MachineId, epoch: EpochId, count: u64 },
    Apply { tick: u64, node: MachineId, version: Version },
    Seal { tick: u64, node: MachineId, epoch: EpochId },
    Global { tick: u64, epoch: EpochId },
    Read { tick: u64, machine: MachineId, version: Version },
    Window { tick: u64, window: u64, swaps: usize, migrations: usize, gc: usize },
    Snapshot { tick: u64, version: Version },
    Step { tick: u64, step: u64, vertex: String, kind: String },
}

impl SimEvent {
    pub fn tick(&self) -> u64 {
        match self {
            SimEvent::Dispatch { tick, .. }
            | SimEvent::Send { tick, .. }
            | SimEvent::Close { tick, .. }
            | SimEvent::Apply { tick, .. }
            | SimEvent::Seal { tick, .. }
            | SimEvent::Global { tick, .. }
            | SimEvent::Read { tick, .. }
            | SimEvent::Window { tick, .. }
            | SimEvent::Snapshot { tick, .. }
            | SimEvent::Step { tick, .. } => *tick,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimTrace {
    pub events: Vec<SimEvent>,
}

impl SimTrace {
    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
    }

    /// Hex sha256 of the JSON-lines export.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.events {
            h.update(serde_json::to_vec(e).expect("event serializes"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Counters kept by the trace monitors.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Monitors {
    /// Applications of an epoch-e mutation at a node that had not sealed
    /// every epoch below e.
    pub unsafe_applies: u64,
    /// Sends made while a mutation of another epoch was in flight.
    pub pipelined_sends: u64,
    pub max_inflight_epochs: usize,
    pub tick_regressions: u64,
    pub lamport_checked_pairs: u64,
    pub lamport_violations: u64,
    pub replica: MonitorReport,
}

impl Monitors {
    pub fn clean(&self) -> bool {
        self.unsafe_applies == 0 && self.tick_regressions == 0 && self.lamport_violations == 0 && self.replica.clean()
    }
}

/// Checks a finished trace against the dispatch rule, independently of the
/// tracker's own bookkeeping.
pub fn check_dispatch_safety(trace: &SimTrace) -> u64 {
    let mut sealed: BTreeMap<MachineId, EpochId> = BTreeMap::new();
    let mut bad = 0;
    for e in &trace.events {
        match e {
            SimEvent::Seal { node, epoch, .. } => {
                sealed.insert(*node, *epoch);
            }
            SimEvent::Apply { node, version, .. } => {
                let ok = version.epoch == 0 || sealed.get(node).is_some_and(|s| *s + 1 >= version.epoch);
                if !ok {
                    bad += 1;
                }
            }
            _ => {}
        }
    }
    bad
}

/// What a simulation computes once its snapshot is available.
#[derive(Clone, Debug, PartialEq)]
pub enum Job {
    None,
    /// Streams the snapshot rows through a pass-through dataflow.
    Identity,
    PageRank {
        iterations: u32,
        damping: f64,
    },
    Sssp {
        source: String,
        scheduler: SsspScheduler,
    },
    Wcc,
    WordCount,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobSpec {
    pub job: Job,
    /// Snapshot to compute on; `None` means the last sealed epoch after the
    /// stream drains.
    pub at: Option<Version>,
}

impl JobSpec {
    pub fn new(job: Job, at: Option<Version>) -> Self {
        Self { job, at }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum JobOutput {
    None,
    Rows(Vec<Payload>),
    Result(AlgoResult),
}

#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub machines: usize,
    pub seed: u64,
    pub ticks: u64,
    pub events: usize,
    pub trace_hash: String,
    pub network_messages: u64,
    pub deferred_dispatches: u64,
    pub windows: Vec<WindowMetrics>,
    /// Tick at which each node sealed each epoch.
    pub seal_ticks: BTreeMap<String, BTreeMap<EpochId, u64>>,
    pub global_seal_ticks: BTreeMap<EpochId, u64>,
    pub edge_messages: BTreeMap<String, u64>,
    pub vertex_steps: BTreeMap<String, u64>,
    pub monitors: Monitors,
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub output: JobOutput,
    pub snapshot: Option<Version>,
    pub trace: SimTrace,
    pub metrics: Metrics,
}

enum Action {
    IngestNext,
    Arrive { node: MachineId, item: Outgoing },
    Process { node: MachineId, item: Outgoing },
    SealNotice { node: MachineId, epoch: EpochId },
}

/// The simulated cluster.
pub struct ClusterSim {
    config: SimConfig,
    rng: ChaCha8Rng,
    records: Vec<StreamRecord>,
    cursor: usize,
    ingest: IngestNode,
    dispatcher: Dispatcher,
    nodes: Vec<NodeProgress>,
    busy_until: Vec<u64>,
    log: ConsensusLog,
    global: GlobalProgress,
    rm: ReplicaManager,
    /// Sequencing placement. Every write to a key passes through the same
    /// data node for the whole run, so per-link FIFO keeps per-key order
    /// even after the replica manager moves the partition's primary.
    home: PartitionMap,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    actions: BTreeMap<u64, Action>,
    link_clock: BTreeMap<(Endpoint, Endpoint), u64>,
    now: u64,
    next_seq: u64,
    processed: u64,
    next_window: u64,
    in_flight: BTreeMap<Version, EpochId>,
    read_keys: Vec<DataKey>,
    known_keys: BTreeSet<DataKey>,
    trace: SimTrace,
    monitors: Monitors,
    network_messages: u64,
    deferred: u64,
    seal_ticks: BTreeMap<String, BTreeMap<EpochId, u64>>,
    global_ticks: BTreeMap<EpochId, u64>,
}

impl ClusterSim {
    pub fn new(config: SimConfig, records: Vec<StreamRecord>) -> Result<Self, SimError> {
        config.validate()?;
        let m = config.machines;
        let mut sim = Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            rm: ReplicaManager::new(config.replica_config()),
            home: PartitionMap::new(config.partitions, m),
            next_window: config.window,
            config,
            records,
            cursor: 0,
            ingest: IngestNode::new(),
            dispatcher: Dispatcher::new(m),
            nodes: (0..m).map(NodeProgress::new).collect(),
            busy_until: vec![0; m],
            log: ConsensusLog::new(),
            global: GlobalProgress::new(m),
            queue: BinaryHeap::new(),
            actions: BTreeMap::new(),
            link_clock: BTreeMap::new(),
            now: 0,
            next_seq: 0,
            processed: 0,
            in_flight: BTreeMap::new(),
            read_keys: Vec::new(),
            known_keys: BTreeSet::new(),
            trace: SimTrace::default(),
            monitors: Monitors::default(),
            network_messages: 0,
            deferred: 0,
            seal_ticks: BTreeMap::new(),
            global_ticks: BTreeMap::new(),
        };
        sim.schedule(0, Action::IngestNext);
        Ok(sim)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn global_progress(&self) -> Option<EpochId> {
        self.global.sealed_global()
    }

    pub fn consensus_log(&self) -> &ConsensusLog {
        &self.log
    }

    pub fn replicas(&self) -> &ReplicaManager {
        &self.rm
    }

    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }

    pub fn monitors(&self) -> Monitors {
        Monitors { replica: self.rm.monitor().clone(), ..self.monitors.clone() }
    }

    fn schedule(&mut self, tick: u64, action: Action) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse((tick, seq)));
        self.actions.insert(seq, action);
    }

    fn record(&mut self, e: SimEvent) {
        if self.trace.events.last().is_some_and(|last| last.tick() > e.tick()) {
            self.monitors.tick_regressions += 1;
        }
        self.trace.events.push(e);
    }

    /// Arrival tick of a message sent now; never earlier than the previous
    /// arrival on the same link.
    fn arrival(&mut self, from: Endpoint, to: Endpoint) -> u64 {
        let key = format!("{}->{}", from.label(), to.label());
        let base = self.config.link_overrides.get(&key).copied().unwrap_or(self.config.link_latency);
        let jitter = if self.config.jitter > 0 { self.rng.gen_range(0..=self.config.jitter) } else { 0 };
        let last = self.link_clock.entry((from, to)).or_insert(0);
        let at = (self.now + base + jitter).max(*last);
        *last = at;
        self.network_messages += 1;
        at
    }

    fn send_items(&mut self, node: MachineId, items: Vec<Outgoing>) {
        for item in items {
            match &item {
                Outgoing::Mutation(m) => {
                    let epoch = m.version.epoch;
                    if self.in_flight.values().any(|e| *e != epoch) {
                        self.monitors.pipelined_sends += 1;
                    }
                    self.in_flight.insert(m.version, epoch);
                    let distinct: BTreeSet<_> = self.in_flight.values().collect();
                    self.monitors.max_inflight_epochs = self.monitors.max_inflight_epochs.max(distinct.len());
                    self.record(SimEvent::Send { tick: self.now, node, version: m.version });
                }
                Outgoing::Close { epoch, count } => {
                    self.record(SimEvent::Close { tick: self.now, node, epoch: *epoch, count: *count });
                }
            }
            let at = self.arrival(Endpoint::Ingest, Endpoint::Node(node));
            self.schedule(at, Action::Arrive { node, item });
        }
    }

    fn ingest_next(&mut self) -> Result<(), SimError> {
        if self.cursor >= self.records.len() {
            return Ok(());
        }
        let rec = self.records[self.cursor].clone();
        self.cursor += 1;
        match self.ingest.ingest(&rec).map_err(|e| match e {
            IngestError::EpochRegression { .. } | IngestError::MissingEpochClose { .. } => e,
            other => IngestError::Parse { line: self.cursor, message: other.to_string() },
        })? {
            Ingested::Mutation(m) => {
                let target = self.home.owner(self.home.partition_of_str(m.entity.placement_key()));
                let version = m.version;
                if let Some(key) = m.keyed_writes().map(|(k, _)| k).next() {
                    if self.known_keys.insert(key.clone()) {
                        self.read_keys.push(key);
                    }
                }
                let (state, items) = self.dispatcher.dispatch(target, m)?;
                let label = match state {
                    DispatchState::Dispatched => "dispatched",
                    DispatchState::Deferred => {
                        self.deferred += 1;
                        "deferred"
                    }
                };
                self.record(SimEvent::Dispatch { tick: self.now, node: target, version, state: label });
                self.send_items(target, items);
            }
            Ingested::EpochClosed(e) => {
                for (node, items) in self.dispatcher.close_epoch(e) {
                    self.send_items(node, items);
                }
            }
            Ingested::Declared(_) => {}
        }
        self.maybe_read();
        if self.cursor < self.records.len() {
            let next = self.now + self.config.ingest_interval;
            self.schedule(next, Action::IngestNext);
        }
        Ok(())
    }

    fn maybe_read(&mut self) {
        let Some(g) = self.global.sealed_global() else { return };
        if self.read_keys.is_empty() || !self.rng.gen_bool(self.config.read_rate) {
            return;
        }
        let machine = self.rng.gen_range(0..self.config.machines);
        let key = self.read_keys[self.rng.gen_range(0..self.read_keys.len())].clone();
        let v = Version::end_of(g);
        if self.rm.coherent_read(machine, &key, v).is_ok() {
            self.record(SimEvent::Read { tick: self.now, machine, version: v });
        }
    }

    fn process(&mut self, node: MachineId, item: Outgoing) -> Result<(), SimError> {
        match item {
            Outgoing::Mutation(m) => {
                self.record(SimEvent::Apply { tick: self.now, node, version: m.version });
                let sealed = self.nodes[node].sealed();
                if !(m.version.epoch == 0 || sealed.is_some_and(|s| s + 1 >= m.version.epoch)) {
                    self.monitors.unsafe_applies += 1;
                }
                self.nodes[node].record_apply(m.version)?;
                for (key, value) in m.keyed_writes() {
                    let owner = self.rm.place(&key);
                    self.rm.coherent_write(owner, key, m.version, value)?;
                }
                self.in_flight.remove(&m.version);
            }
            Outgoing::Close { epoch, count } => self.nodes[node].mark_closed(epoch, count),
        }
        for epoch in self.nodes[node].try_seal() {
            self.record(SimEvent::Seal { tick: self.now, node, epoch });
            self.seal_ticks.entry(node.to_string()).or_default().insert(epoch, self.now);
            let before = self.global.sealed_global();
            let entry = SealAnnouncement { node, epoch };
            self.log.append(entry);
            self.global.observe(entry);
            let after = self.global.sealed_global();
            if after != before {
                if let Some(g) = after {
                    self.record(SimEvent::Global { tick: self.now, epoch: g });
                    self.global_ticks.insert(g, self.now);
                    self.rm.advance_stable(Version::end_of(g));
                }
            }
            let at = self.arrival(Endpoint::Node(node), Endpoint::Ingest);
            self.schedule(at, Action::SealNotice { node, epoch });
        }
        Ok(())
    }

    fn close_windows_through(&mut self, t: u64) {
        while self.next_window <= t {
            let m = self.rm.end_window();
            self.record(SimEvent::Window {
                tick: self.next_window,
                window: m.window,
                swaps: m.swaps,
                migrations: m.migrations,
                gc: m.gc,
            });
            self.next_window += self.config.window;
        }
    }

    /// Runs one event. Returns false when nothing is scheduled.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let Some(Reverse((tick, seq))) = self.queue.pop() else { return Ok(false) };
        if self.processed >= self.config.step_budget {
            return Err(SimError::StepBudgetExceeded { budget: self.config.step_budget });
        }
        self.processed += 1;
        self.close_windows_through(tick);
        self.now = tick;
        self.rm.advance_to(tick);
        match self.actions.remove(&seq).expect("scheduled action") {
            Action::IngestNext => self.ingest_next()?,
            Action::Arrive { node, item } => {
                let start = self.now.max(self.busy_until[node]);
                let done = start + self.config.service_ticks;
                self.busy_until[node] = done;
                self.schedule(done, Action::Process { node, item });
            }
            Action::Process { node, item } => self.process(node, item)?,
            Action::SealNotice { node, epoch } => {
                let items = self.dispatcher.on_sealed(node, epoch);
                self.send_items(node, items);
            }
        }
        Ok(true)
    }

    /// Runs until the global snapshot covers `v`.
    pub fn await_snapshot(&mut self, v: Version) -> Result<Version, SimError> {
        while self.global.sealed_global().is_none_or(|g| g < v.epoch) {
            if !self.step()? {
                return Err(TrackerError::StreamEnded { requested: v, global: self.global.sealed_global() }.into());
            }
        }
        self.record(SimEvent::Snapshot { tick: self.now, version: v });
        Ok(v)
    }

    /// Runs until no event is left, then settles replica propagation.
    pub fn quiesce(&mut self) -> Result<(), SimError> {
        while self.step()? {}
        self.rm.quiesce();
        Ok(())
    }

    /// The graph at `v` as held by the current primaries.
    pub fn graph_at(&self, v: Version) -> GraphSnapshot {
        GraphSnapshot::from_handle(&SnapshotHandle::over(self.rm.primary_stores(), v))
    }

    pub fn snapshot_rows(&self, v: Version) -> Vec<Payload> {
        SnapshotHandle::over(self.rm.primary_stores(), v)
            .to_rows()
            .into_iter()
            .map(|(k, val)| vec![Value::Str(k), val])
            .collect()
    }

    fn record_job_trace(&mut self, events: &[CausalEvent]) {
        let tick = self.now;
        for e in events {
            let kind = match &e.kind {
                EventKind::Receive => "receive".to_string(),
                EventKind::Send => "send".to_string(),
                EventKind::Output => "output".to_string(),
                EventKind::Custom(l) => format!("custom:{l}"),
            };
            self.record(SimEvent::Step { tick, step: e.step, vertex: e.vertex.clone(), kind });
        }
    }
}

/// Largest trace on which the Lamport condition is checked pair by pair.
pub const LAMPORT_CHECK_LIMIT: usize = 5_000;

/// Counts related pairs with `T(e1) >= T(e2)`; returns (pairs, violations).
pub fn check_lamport(events: &[CausalEvent]) -> (u64, u64) {
    let (mut pairs, mut bad) = (0, 0);
    for a in events {
        for b in events {
            if happened_before(a, b) {
                pairs += 1;
                if a.t >= b.t {
                    bad += 1;
                }
            }
        }
    }
    (pairs, bad)
}

/// Text lines of a snapshot for word counting: every string property of a
/// live node, in node order.
pub fn text_lines(g: &GraphSnapshot) -> Vec<Payload> {
    g.nodes.values().flat_map(|props| props.values().filter_map(|v| v.as_str().map(|s| vec![Value::from(s)]))).collect()
}

/// Runs `job` on `graph` with one dataflow worker per machine.
pub fn run_job(
    job: &Job,
    graph: &GraphSnapshot,
    rows: Vec<Payload>,
    cfg: &JobConfig,
) -> Result<(JobOutput, Option<RunOutput>), SimError> {
    Ok(match job {
        Job::None => (JobOutput::None, None),
        Job::Identity => {
            let mut reg = ProtocolRegistry::new();
            reg.register(crate::dataflow::identity_protocol())?;
            let spec = crate::dataflow::GraphSpec::default()
                .vertex(crate::dataflow::VertexSpec::new("in", "identity", crate::dataflow::VertexRole::Ingress))
                .vertex(crate::dataflow::VertexSpec::new("out", "identity", crate::dataflow::VertexRole::Egress))
                .edge("in", "out");
            let g = DataflowGraph::build(spec, &reg)?;
            let out = crate::dataflow::run_single(&g, rows, cfg_options(cfg))?;
            (JobOutput::Rows(out.outputs.iter().map(|(_, p)| p.clone()).collect()), Some(out))
        }
        Job::PageRank { iterations, damping } => {
            let (r, out) = models::pagerank(graph, *iterations, *damping, cfg)?;
            (JobOutput::Result(r), Some(out))
        }
        Job::Sssp { source, scheduler } => {
            let (r, out) = models::sssp(graph, source, *scheduler, cfg)?;
            (JobOutput::Result(r), Some(out))
        }
        Job::Wcc => {
            let (r, out) = models::wcc(graph, cfg)?;
            (JobOutput::Result(r), Some(out))
        }
        Job::WordCount => {
            let (rows, out) =
                models::mapreduce(text_lines(graph), &models::wordcount_job(), cfg.workers, cfg.workers, cfg.seed)?;
            let r =
                rows.into_iter().filter_map(|p| Some((p.first()?.as_str()?.to_string(), p.get(1)?.clone()))).collect();
            (JobOutput::Result(r), Some(out))
        }
    })
}

fn cfg_options(cfg: &JobConfig) -> crate::dataflow::RunOptions {
    crate::dataflow::RunOptions { seed: cfg.seed, step_budget: cfg.step_budget, trace: cfg.trace }
}

/// Ingests `stream` on the simulated cluster, runs `job` on its snapshot
/// once available, and drains the remaining stream.
pub fn simulate(config: &SimConfig, stream: &str, job: &JobSpec) -> Result<SimOutcome, SimError> {
    let records = parse_stream(stream)?;
    let mut sim = ClusterSim::new(config.clone(), records)?;
    let mut early = None;
    if let Some(v) = job.at {
        sim.await_snapshot(v)?;
        early = Some(v);
    }
    let run_at = |sim: &mut ClusterSim, v: Version| -> Result<(JobOutput, Option<RunOutput>), SimError> {
        let graph = sim.graph_at(v);
        let rows = if job.job == Job::Identity { sim.snapshot_rows(v) } else { Vec::new() };
        let cfg = JobConfig::new(config.machines, config.seed).with_trace();
        let (output, run) = run_job(&job.job, &graph, rows, &cfg)?;
        if let Some(run) = &run {
            sim.record_job_trace(&run.trace);
            if run.trace.len() <= LAMPORT_CHECK_LIMIT {
                let (pairs, bad) = check_lamport(&run.trace);
                sim.monitors.lamport_checked_pairs += pairs;
                sim.monitors.lamport_violations += bad;
            }
        }
        Ok((output, run))
    };
    let mut result = match early {
        Some(v) => Some(run_at(&mut sim, v)?),
        None => None,
    };
    sim.quiesce()?;
    let snapshot = match early {
        Some(v) => Some(v),
        None if job.job == Job::None => sim.global_progress().map(Version::end_of),
        None => {
            let g = sim
                .global_progress()
                .ok_or(TrackerError::StreamEnded { requested: Version::end_of(0), global: None })?;
            let v = Version::end_of(g);
            sim.record(SimEvent::Snapshot { tick: sim.now, version: v });
            result = Some(run_at(&mut sim, v)?);
            Some(v)
        }
    };
    let (output, run) = result.unwrap_or((JobOutput::None, None));
    let stats = run.map(|r| r.stats).unwrap_or_default();
    let monitors = sim.monitors();
    let metrics = Metrics {
        machines: config.machines,
        seed: config.seed,
        ticks: sim.now,
        events: sim.trace.events.len(),
        trace_hash: sim.trace.hash(),
        network_messages: sim.network_messages,
        deferred_dispatches: sim.deferred,
        windows: sim.rm.metrics().to_vec(),
        seal_ticks: sim.seal_ticks.clone(),
        global_seal_ticks: sim.global_ticks.clone(),
        edge_messages: stats.edge_messages,
        vertex_steps: stats.vertex_steps,
        monitors,
    };
    Ok(SimOutcome { output, snapshot, trace: std::mem::take(&mut sim.trace), metrics })
}
