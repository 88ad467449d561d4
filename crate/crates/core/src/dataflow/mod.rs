//! Protocol dataflow: stateful vertices exchanging messages through
//! scheduler-controlled queues.
//!
//! A graph starts at ingress vertices, which wrap external records into
//! messages, and ends at egress vertices, which hand payloads to an external
//! consumer. A protocol bundles a codec, a payload shape, per-vertex step
//! logic and default schedulers. Graphs built from different protocols can
//! be stitched together egress-to-ingress.

mod causal;
mod graph;
mod runtime;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::types::{Value, ValueKind};

pub use causal::{deliver_events, export_trace, happened_before, CausalEvent, EventId, EventKind, Relation};
pub use graph::{compose, DataflowGraph, EdgeSpec, GraphSpec, VertexRole, VertexSpec};
pub use runtime::{pick_ready, run, run_single, RunOptions, RunOutput, RunStats, StepContext};

/// Opaque value list carried by a message.
pub type Payload = Vec<Value>;
/// Coordination metadata travelling with a payload (superstep, epoch, EOS).
pub type Meta = BTreeMap<String, Value>;

pub const EOS: &str = "eos";

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub protocol: Arc<str>,
    pub payload: Payload,
    pub meta: Meta,
    /// Sender's logical clock at send.
    pub timestamp: u64,
    pub(crate) vc: Arc<Vec<u64>>,
}

impl Message {
    pub fn is_eos(&self) -> bool {
        self.meta.get(EOS) == Some(&Value::Bool(true))
    }

    pub fn meta_int(&self, name: &str) -> Option<i64> {
        self.meta.get(name).and_then(Value::as_int)
    }

    /// Splits the payload into records of `arity` values.
    pub fn records(&self, arity: usize) -> std::slice::Chunks<'_, Value> {
        self.payload.chunks(arity.max(1))
    }
}

pub fn eos_meta() -> Meta {
    Meta::from([(EOS.to_string(), Value::Bool(true))])
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataflowError {
    #[error("DuplicateProtocol: {0}")]
    DuplicateProtocol(String),
    #[error("CodecSelfTestFailed: protocol {protocol} does not round-trip sample {sample}")]
    CodecSelfTestFailed { protocol: String, sample: usize },
    #[error("UnknownProtocol: {0}")]
    UnknownProtocol(String),
    #[error("NoIngress: {0}")]
    NoIngress(String),
    #[error("NoEgress: graph has no egress vertex")]
    NoEgress,
    #[error("DanglingQueue: edge {from} -> {to}: {reason}")]
    DanglingQueue { from: String, to: String, reason: &'static str },
    #[error("DuplicateVertex: {0}")]
    DuplicateVertex(String),
    #[error("IncompatibleStitch: {egress} emits {emits:?}, {ingress} accepts {accepts:?}")]
    IncompatibleStitch { egress: String, ingress: String, emits: Vec<ValueKind>, accepts: Vec<ValueKind> },
    #[error("UnknownVertex: {0} is not an unstitched ingress vertex")]
    UnknownVertex(String),
    #[error("StepBudgetExceeded: no quiescence within {budget} steps")]
    StepBudgetExceeded { budget: u64 },
    #[error("HandlerFault: vertex {vertex}: {message}")]
    HandlerFault { vertex: String, message: String },
    #[error("NotPartialOrder: {0}")]
    NotPartialOrder(String),
}

/// Payload encode/decode pair.
pub trait Codec: Send + Sync {
    fn encode(&self, payload: &Payload) -> Vec<u8>;
    fn decode(&self, bytes: &[u8]) -> Result<Payload, String>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct JsonCodec;

impl Codec for JsonCodec {
    fn encode(&self, payload: &Payload) -> Vec<u8> {
        serde_json::to_vec(payload).expect("payload serializes")
    }

    fn decode(&self, bytes: &[u8]) -> Result<Payload, String> {
        serde_json::from_slice(bytes).map_err(|e| e.to_string())
    }
}

/// What a vertex does with one message.
pub trait VertexLogic: Send {
    fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String>;
}

/// Everything a protocol factory learns about the vertex it builds.
#[derive(Clone, Debug)]
pub struct VertexInit {
    pub id: String,
    pub role: VertexRole,
    pub params: BTreeMap<String, Value>,
    pub upstream: Vec<String>,
    pub downstream: Vec<String>,
}

impl VertexInit {
    pub fn param_int(&self, name: &str) -> Option<i64> {
        self.params.get(name).and_then(Value::as_int)
    }

    pub fn param_float(&self, name: &str) -> Option<f64> {
        self.params.get(name).and_then(Value::as_float)
    }

    pub fn param_str(&self, name: &str) -> Option<&str> {
        self.params.get(name).and_then(Value::as_str)
    }
}

pub type PriorityFn = Arc<dyn Fn(&Message) -> i64 + Send + Sync>;
type Factory = Arc<dyn Fn(&VertexInit) -> Box<dyn VertexLogic> + Send + Sync>;

/// Chooses which queued message a vertex consumes next.
#[derive(Clone)]
pub enum InputScheduler {
    /// Earliest arrival first.
    Fifo,
    /// Smallest key first, ties broken by arrival.
    Priority(PriorityFn),
}

impl fmt::Debug for InputScheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputScheduler::Fifo => f.write_str("Fifo"),
            InputScheduler::Priority(_) => f.write_str("Priority"),
        }
    }
}

/// Reorders or merges the emissions of a single step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScheduler {
    Passthrough,
    /// Emissions of one step to the same port with equal metadata are
    /// concatenated into one message.
    BatchByDestination,
}

#[derive(Clone)]
pub struct Protocol {
    pub id: String,
    pub codec: Arc<dyn Codec>,
    /// Record shape accepted at ingress.
    pub ingress_shape: Vec<ValueKind>,
    /// Record shape emitted at egress.
    pub egress_shape: Vec<ValueKind>,
    pub input: InputScheduler,
    pub output: OutputScheduler,
    /// Outputs are a function of the inputs alone, whatever the interleaving.
    pub confluent: bool,
    pub samples: Vec<Payload>,
    factory: Factory,
}

impl Protocol {
    pub fn new(
        id: impl Into<String>,
        factory: impl Fn(&VertexInit) -> Box<dyn VertexLogic> + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            codec: Arc::new(JsonCodec),
            ingress_shape: Vec::new(),
            egress_shape: Vec::new(),
            input: InputScheduler::Fifo,
            output: OutputScheduler::Passthrough,
            confluent: false,
            samples: Vec::new(),
            factory: Arc::new(factory),
        }
    }

    pub fn codec(mut self, codec: impl Codec + 'static) -> Self {
        self.codec = Arc::new(codec);
        self
    }

    pub fn shapes(mut self, ingress: Vec<ValueKind>, egress: Vec<ValueKind>) -> Self {
        self.ingress_shape = ingress;
        self.egress_shape = egress;
        self
    }

    pub fn input(mut self, input: InputScheduler) -> Self {
        self.input = input;
        self
    }

    pub fn output(mut self, output: OutputScheduler) -> Self {
        self.output = output;
        self
    }

    pub fn confluent(mut self, confluent: bool) -> Self {
        self.confluent = confluent;
        self
    }

    pub fn samples(mut self, samples: Vec<Payload>) -> Self {
        self.samples = samples;
        self
    }

    pub fn instantiate(&self, init: &VertexInit) -> Box<dyn VertexLogic> {
        (self.factory)(init)
    }

    pub fn round_trips(&self, payload: &Payload) -> bool {
        self.codec.decode(&self.codec.encode(payload)).is_ok_and(|p| payload_bits_eq(&p, payload))
    }
}

impl fmt::Debug for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Protocol")
            .field("id", &self.id)
            .field("input", &self.input)
            .field("output", &self.output)
            .field("confluent", &self.confluent)
            .finish()
    }
}

pub fn payload_bits_eq(a: &Payload, b: &Payload) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
}

#[derive(Clone, Default)]
pub struct ProtocolRegistry {
    protocols: BTreeMap<String, Arc<Protocol>>,
    relations: BTreeMap<String, Relation>,
}

impl ProtocolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, p: Protocol) -> Result<(), DataflowError> {
        if self.protocols.contains_key(&p.id) {
            return Err(DataflowError::DuplicateProtocol(p.id));
        }
        if let Some(sample) = p.samples.iter().position(|s| !p.round_trips(s)) {
            return Err(DataflowError::CodecSelfTestFailed { protocol: p.id, sample });
        }
        self.protocols.insert(p.id.clone(), Arc::new(p));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Arc<Protocol>> {
        self.protocols.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.protocols.keys().map(String::as_str)
    }

    pub fn register_causal_relation(&mut self, protocol: &str, relation: Relation) -> Result<(), DataflowError> {
        if !self.protocols.contains_key(protocol) {
            return Err(DataflowError::UnknownProtocol(protocol.to_string()));
        }
        self.relations.insert(protocol.to_string(), relation);
        Ok(())
    }

    /// The registered relation, defaulting to happened-before.
    pub fn relation(&self, protocol: &str) -> Relation {
        self.relations.get(protocol).cloned().unwrap_or(Relation::HappenedBefore)
    }
}

impl fmt::Debug for ProtocolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.protocols.keys()).finish()
    }
}

/// Counts end-of-stream markers until every upstream vertex has sent one.
#[derive(Clone, Copy, Debug, Default)]
pub struct EosCounter {
    seen: usize,
}

impl EosCounter {
    /// Records an EOS and returns true when the last expected one arrives.
    pub fn observe(&mut self, expected: usize) -> bool {
        self.seen += 1;
        self.seen == expected.max(1)
    }
}

/// Forwards every record to every downstream port; egress vertices hand
/// records to the consumer.
#[derive(Default)]
pub struct Forward {
    eos: EosCounter,
}

impl VertexLogic for Forward {
    fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if msg.is_eos() {
            if self.eos.observe(ctx.upstream_count()) {
                ctx.finish();
            }
            return Ok(());
        }
        ctx.forward(msg.payload.clone(), Meta::new());
        Ok(())
    }
}

/// Pass-through protocol.
pub fn identity_protocol() -> Protocol {
    Protocol::new("identity", |_| Box::new(Forward::default()))
        .shapes(vec![ValueKind::Integer], vec![ValueKind::Integer])
        .confluent(true)
        .samples(vec![vec![Value::Int(1)], vec![Value::Int(-7)], vec![]])
}
