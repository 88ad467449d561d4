//! Mutation stream records and the ingest node's version assignment.
//!
//! A stream is JSON-lines, grouped by non-decreasing epoch:
//!
//! ```text
//! {"epoch":0,"op":"declare","kind":"node","name":"author","version":1,"fields":[{"name":"name","kind":"string"}]}
//! {"epoch":0,"op":"add_node","id":"a1","schema":"author@1","props":{"name":"Ada"}}
//! {"epoch":0,"op":"add_edge","src":"a1","dst":"p1","slot":"wrote","props":{}}
//! {"epoch":0,"op":"del_edge","src":"a1","dst":"p1","slot":"wrote"}
//! {"epoch":0,"op":"update_node","id":"a1","props":{"name":"Ada L."}}
//! {"epoch":0,"op":"epoch_close"}
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::schema::{SchemaDecl, SchemaError, SchemaLine, SchemaRegistry, SchemaTag, Violation};
use crate::store::{DataKey, EntityId, Property};
use crate::types::{EpochId, Value, Version};

pub type Props = BTreeMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub epoch: EpochId,
    #[serde(flatten)]
    pub op: StreamOp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StreamOp {
    Declare(SchemaLine),
    AddNode {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schema: Option<SchemaTag>,
        #[serde(default)]
        props: Props,
    },
    UpdateNode {
        id: String,
        /// Re-tags the node with a newer schema version; `props` must then
        /// be a complete payload for it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schema: Option<SchemaTag>,
        #[serde(default)]
        props: Props,
    },
    AddEdge {
        src: String,
        dst: String,
        slot: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schema: Option<SchemaTag>,
        #[serde(default)]
        props: Props,
    },
    DelEdge {
        src: String,
        dst: String,
        slot: String,
    },
    EpochClose,
}

impl StreamRecord {
    pub fn new(epoch: EpochId, op: StreamOp) -> Self {
        Self { epoch, op }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stream records serialize")
    }
}

/// A graph change stamped with its version. All writes share the version
/// and target the same entity, hence the same partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Mutation {
    pub version: Version,
    pub entity: EntityId,
    pub writes: Vec<(Property, Option<Value>)>,
    pub schema: Option<SchemaTag>,
}

impl Mutation {
    pub fn keyed_writes(&self) -> impl Iterator<Item = (DataKey, Option<Value>)> + '_ {
        self.writes.iter().map(|(p, v)| (DataKey { entity: self.entity.clone(), property: p.clone() }, v.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("ParseError: line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("EpochRegression: record for epoch {epoch} after epoch {current} opened")]
    EpochRegression { epoch: EpochId, current: EpochId },
    #[error("MissingEpochClose: record for epoch {epoch} while epoch {current} is still open")]
    MissingEpochClose { epoch: EpochId, current: EpochId },
    #[error("UnknownSchema: {0}")]
    UnknownSchema(SchemaTag),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("SchemaViolation: {entity}: {}", violations.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    SchemaViolation { entity: String, violations: Vec<Violation> },
    #[error("UnknownNode: {0}")]
    UnknownNode(String),
    #[error("DuplicateNode: {0}")]
    DuplicateNode(String),
    #[error("UnknownEdge: {0}")]
    UnknownEdge(String),
    #[error("DuplicateEdge: {0}")]
    DuplicateEdge(String),
    #[error("UnknownSlot: {schema} has no link slot {slot:?} to {target}")]
    UnknownSlot { schema: SchemaTag, slot: String, target: String },
}

impl IngestError {
    /// Attaches a 1-based line number to epoch-order errors raised while
    /// scanning a file.
    fn at_line(self, line: usize) -> IngestError {
        match self {
            IngestError::Parse { .. } => self,
            other => IngestError::Parse { line, message: other.to_string() },
        }
    }
}

/// Parses a JSON-lines stream, rejecting decreasing epochs.
pub fn parse_stream(text: &str) -> Result<Vec<StreamRecord>, IngestError> {
    let mut out = Vec::new();
    let mut last_epoch = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: StreamRecord =
            serde_json::from_str(line).map_err(|e| IngestError::Parse { line: i + 1, message: e.to_string() })?;
        if rec.epoch < last_epoch {
            return Err(IngestError::EpochRegression { epoch: rec.epoch, current: last_epoch });
        }
        last_epoch = rec.epoch;
        out.push(rec);
    }
    Ok(out)
}

pub fn render_stream(records: &[StreamRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_json());
        s.push('\n');
    }
    s
}

/// What one record turned into at the ingest node.
#[derive(Clone, Debug, PartialEq)]
pub enum Ingested {
    Declared(SchemaTag),
    Mutation(Mutation),
    EpochClosed(EpochId),
}

/// The ingest node's bookkeeping: schema registry, current epoch, sequence
/// counter, and enough liveness state to validate edges and deletes.
#[derive(Clone, Debug, Default)]
pub struct IngestNode {
    schemas: SchemaRegistry,
    epoch: EpochId,
    next_seq: u64,
    nodes: BTreeMap<String, Option<SchemaTag>>,
    edges: BTreeMap<EntityId, BTreeSet<String>>,
}

impl IngestNode {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_schemas(schemas: SchemaRegistry) -> Self {
        Self { schemas, ..Self::default() }
    }

    pub fn current_epoch(&self) -> EpochId {
        self.epoch
    }

    pub fn schemas(&self) -> &SchemaRegistry {
        &self.schemas
    }

    pub fn node_schema(&self, id: &str) -> Option<&SchemaTag> {
        self.nodes.get(id).and_then(Option::as_ref)
    }

    fn next_version(&mut self) -> Version {
        let v = Version::new(self.epoch, self.next_seq);
        self.next_seq += 1;
        v
    }

    /// Validates `rec` and assigns the next version of the current epoch.
    /// State is only modified when the record is accepted.
    pub fn ingest(&mut self, rec: &StreamRecord) -> Result<Ingested, IngestError> {
        if rec.epoch < self.epoch {
            return Err(IngestError::EpochRegression { epoch: rec.epoch, current: self.epoch });
        }
        if rec.epoch > self.epoch {
            return Err(IngestError::MissingEpochClose { epoch: rec.epoch, current: self.epoch });
        }
        match &rec.op {
            StreamOp::Declare(line) => {
                let decl = SchemaDecl::try_from(line.clone())?;
                Ok(Ingested::Declared(self.schemas.declare(decl)?))
            }
            StreamOp::EpochClose => {
                let closed = self.epoch;
                self.epoch += 1;
                self.next_seq = 0;
                Ok(Ingested::EpochClosed(closed))
            }
            StreamOp::AddNode { id, schema, props } => {
                if self.nodes.contains_key(id) {
                    return Err(IngestError::DuplicateNode(id.clone()));
                }
                if let Some(tag) = schema {
                    self.check_full(id, tag, props)?;
                }
                let mut writes = vec![(Property::Exists, Some(exists_marker(schema.as_ref())))];
                writes.extend(props.iter().map(|(k, v)| (Property::Field(k.clone()), Some(v.clone()))));
                self.nodes.insert(id.clone(), schema.clone());
                Ok(Ingested::Mutation(Mutation {
                    version: self.next_version(),
                    entity: EntityId::node(id.clone()),
                    writes,
                    schema: schema.clone(),
                }))
            }
            StreamOp::UpdateNode { id, schema, props } => {
                let current = self.nodes.get(id).ok_or_else(|| IngestError::UnknownNode(id.clone()))?.clone();
                let mut writes = Vec::new();
                let effective = match (schema, &current) {
                    (Some(tag), _) => {
                        self.check_full(id, tag, props)?;
                        writes.push((Property::Exists, Some(exists_marker(Some(tag)))));
                        Some(tag.clone())
                    }
                    (None, Some(tag)) => {
                        let violations = self.schemas.validate_partial(tag, props)?;
                        if !violations.is_empty() {
                            return Err(IngestError::SchemaViolation { entity: id.clone(), violations });
                        }
                        current.clone()
                    }
                    (None, None) => None,
                };
                writes.extend(props.iter().map(|(k, v)| (Property::Field(k.clone()), Some(v.clone()))));
                self.nodes.insert(id.clone(), effective.clone());
                Ok(Ingested::Mutation(Mutation {
                    version: self.next_version(),
                    entity: EntityId::node(id.clone()),
                    writes,
                    schema: effective,
                }))
            }
            StreamOp::AddEdge { src, dst, slot, schema, props } => {
                let entity = EntityId::edge(src.clone(), dst.clone(), slot.clone());
                if self.edges.contains_key(&entity) {
                    return Err(IngestError::DuplicateEdge(entity.to_string()));
                }
                self.check_edge(src, dst, slot, schema.as_ref(), props)?;
                let mut writes = vec![(Property::Exists, Some(Value::Bool(true)))];
                writes.extend(props.iter().map(|(k, v)| (Property::Field(k.clone()), Some(v.clone()))));
                self.edges.insert(entity.clone(), props.keys().cloned().collect());
                Ok(Ingested::Mutation(Mutation {
                    version: self.next_version(),
                    entity,
                    writes,
                    schema: schema.clone(),
                }))
            }
            StreamOp::DelEdge { src, dst, slot } => {
                let entity = EntityId::edge(src.clone(), dst.clone(), slot.clone());
                let fields = self.edges.remove(&entity).ok_or_else(|| IngestError::UnknownEdge(entity.to_string()))?;
                let mut writes = vec![(Property::Exists, None)];
                writes.extend(fields.into_iter().map(|f| (Property::Field(f), None)));
                Ok(Ingested::Mutation(Mutation { version: self.next_version(), entity, writes, schema: None }))
            }
        }
    }

    fn check_full(&self, id: &str, tag: &SchemaTag, props: &Props) -> Result<(), IngestError> {
        if !self.schemas.contains(tag) {
            return Err(IngestError::UnknownSchema(tag.clone()));
        }
        let violations = self.schemas.validate_payload(tag, props)?;
        if violations.is_empty() {
            Ok(())
        } else {
            Err(IngestError::SchemaViolation { entity: id.to_string(), violations })
        }
    }

    /// `tag` equals `ancestor` or inherits from it.
    fn is_a(&self, tag: &SchemaTag, ancestor: &SchemaTag) -> bool {
        let mut cursor = Some(tag.clone());
        while let Some(t) = cursor {
            if &t == ancestor {
                return true;
            }
            cursor = match self.schemas.get(&t) {
                Some(SchemaDecl::Node(n)) => n.parent.clone(),
                _ => None,
            };
        }
        false
    }

    fn check_edge(
        &self,
        src: &str,
        dst: &str,
        slot: &str,
        schema: Option<&SchemaTag>,
        props: &Props,
    ) -> Result<(), IngestError> {
        let src_schema = self.nodes.get(src).ok_or_else(|| IngestError::UnknownNode(src.to_string()))?;
        let dst_schema = self.nodes.get(dst).ok_or_else(|| IngestError::UnknownNode(dst.to_string()))?;
        let entity = format!("{src}>{dst}/{slot}");

        if let Some(tag) = schema {
            if !self.schemas.contains(tag) {
                return Err(IngestError::UnknownSchema(tag.clone()));
            }
            let eff = self.schemas.resolve_effective(tag)?;
            let Some((source, target)) = eff.endpoints else {
                return Err(SchemaError::NotANodeSchema(tag.clone()).into());
            };
            let fits = |node: &Option<SchemaTag>, want: &SchemaTag| node.as_ref().is_some_and(|t| self.is_a(t, want));
            if !fits(src_schema, &source) || !fits(dst_schema, &target) {
                return Err(IngestError::UnknownSlot { schema: tag.clone(), slot: slot.into(), target: dst.into() });
            }
            let violations = self.schemas.validate_payload(tag, props)?;
            if !violations.is_empty() {
                return Err(IngestError::SchemaViolation { entity, violations });
            }
            return Ok(());
        }

        // Slot-based edges: the source node's schema must declare the slot
        // and the destination must be an instance of its target.
        if let Some(src_tag) = src_schema {
            let eff = self.schemas.resolve_effective(src_tag)?;
            let ok = eff.slot(slot).is_some_and(|s| dst_schema.as_ref().is_some_and(|d| self.is_a(d, &s.target)));
            if !ok {
                return Err(IngestError::UnknownSlot {
                    schema: src_tag.clone(),
                    slot: slot.into(),
                    target: dst.into(),
                });
            }
            if !props.is_empty() {
                let violations = props.keys().map(|k| Violation::ExtraField(k.clone())).collect();
                return Err(IngestError::SchemaViolation { entity, violations });
            }
        }
        Ok(())
    }
}

/// Value stored under a node's EXISTS key: its schema tag, or `true` for
/// nodes of an abstract (schemaless) graph.
pub fn exists_marker(schema: Option<&SchemaTag>) -> Value {
    match schema {
        Some(tag) => Value::Str(tag.to_string()),
        None => Value::Bool(true),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamSummary {
    pub records: usize,
    pub mutations: usize,
    pub declarations: usize,
    pub epochs_closed: u64,
}

/// Runs the schema and epoch-order checks of the ingest node over a whole
/// stream without dispatching anything.
pub fn validate_stream(text: &str) -> Result<StreamSummary, IngestError> {
    let records = parse_stream(text)?;
    let mut node = IngestNode::new();
    let mut summary = StreamSummary { records: records.len(), ..Default::default() };
    for (i, rec) in records.iter().enumerate() {
        match node.ingest(rec) {
            Ok(Ingested::Mutation(_)) => summary.mutations += 1,
            Ok(Ingested::Declared(_)) => summary.declarations += 1,
            Ok(Ingested::EpochClosed(_)) => summary.epochs_closed += 1,
            Err(e @ (IngestError::EpochRegression { .. } | IngestError::MissingEpochClose { .. })) => return Err(e),
            Err(e) => return Err(e.at_line(i + 1)),
        }
    }
    Ok(summary)
}

/// A stream ingested into a single store.
#[derive(Clone, Debug, Default)]
pub struct Replayed {
    pub store: crate::store::VersionedStore<Value>,
    pub mutations: Vec<Mutation>,
    /// The last closed epoch, if any.
    pub sealed: Option<EpochId>,
    pub ingest: IngestNode,
}

/// Ingests `records` in order and applies every mutation to one store.
pub fn replay(records: &[StreamRecord]) -> Result<Replayed, IngestError> {
    let mut out = Replayed::default();
    for (i, rec) in records.iter().enumerate() {
        let ingested = out.ingest.ingest(rec).map_err(|e| match e {
            IngestError::EpochRegression { .. } | IngestError::MissingEpochClose { .. } => e,
            other => other.at_line(i + 1),
        })?;
        match ingested {
            Ingested::Mutation(m) => {
                for (key, value) in m.keyed_writes() {
                    out.store.apply(key, m.version, value).expect("ingest versions increase");
                }
                out.mutations.push(m);
            }
            Ingested::EpochClosed(e) => out.sealed = Some(e),
            Ingested::Declared(_) => {}
        }
    }
    Ok(out)
}
