//! Lineage-addressed materialized views.
//!
//! A view is named by the hash of the computation that produced it, so two
//! jobs defining the same lineage share one materialization. Contents are
//! split across partitions by stable hash of the row key. A lost partition
//! is rebuilt by replaying the lineage and keeping the rows that hash to it;
//! this is sound only because every registered operator is deterministic.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::replica::{PartitionId, PartitionMap};
use crate::store::{export_rows, VersionedStore};
use crate::types::{EpochId, Value, Version};

pub type Dataset = BTreeMap<String, Value>;
pub type Params = BTreeMap<String, Value>;

/// How a dataset was computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "node")]
pub enum Lineage {
    Source {
        version: Version,
    },
    Apply {
        op: String,
        args: Vec<Lineage>,
        #[serde(default)]
        params: Params,
    },
}

impl Lineage {
    pub fn source(version: Version) -> Self {
        Lineage::Source { version }
    }

    pub fn apply(op: impl Into<String>, args: Vec<Lineage>) -> Self {
        Lineage::Apply { op: op.into(), args, params: Params::new() }
    }

    pub fn with_param(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        if let Lineage::Apply { params, .. } = &mut self {
            params.insert(name.into(), value.into());
        }
        self
    }

    pub fn depth(&self) -> usize {
        match self {
            Lineage::Source { .. } => 0,
            Lineage::Apply { args, .. } => 1 + args.iter().map(Lineage::depth).max().unwrap_or(0),
        }
    }

    pub fn sources(&self) -> Vec<Version> {
        match self {
            Lineage::Source { version } => vec![*version],
            Lineage::Apply { args, .. } => args.iter().flat_map(Lineage::sources).collect(),
        }
    }

    /// Canonical JSON: params are a `BTreeMap`, so key order is fixed.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("lineage serializes")
    }

    pub fn id(&self) -> ViewId {
        ViewId(hex::encode(Sha256::digest(self.canonical().as_bytes())))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViewId(pub String);

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ViewError {
    #[error("UnknownOperator: {0}")]
    UnknownOperator(String),
    #[error("DuplicateOperator: {0}")]
    DuplicateOperator(String),
    #[error("NondeterministicOperator: {0} failed the two-run self-test or was not declared deterministic")]
    NondeterministicOperator(String),
    #[error("BadArity: operator {op} takes {expected} inputs, got {found}")]
    BadArity { op: String, expected: usize, found: usize },
    #[error("OperatorFailed: {op}: {message}")]
    OperatorFailed { op: String, message: String },
    #[error("SnapshotNotAvailable: snapshot {requested} is not sealed (global progress {global:?})")]
    SnapshotNotAvailable { requested: Version, global: Option<EpochId> },
    #[error("SourceUnavailable: snapshot {requested} was compacted (store compacted to {compacted_to})")]
    SourceUnavailable { requested: Version, compacted_to: Version },
    #[error("UnknownView: {0}")]
    UnknownView(ViewId),
    #[error("PartitionLost: view {view} partition {partition}")]
    PartitionLost { view: ViewId, partition: PartitionId },
}

/// Provides sealed snapshots as flat rows.
pub trait SnapshotSource {
    fn rows_at(&self, v: Version) -> Result<Dataset, ViewError>;
}

/// Snapshot rows over a set of disjoint stores, limited to sealed epochs.
pub struct StoreSource<'a> {
    pub stores: Vec<&'a VersionedStore<Value>>,
    pub sealed: Option<EpochId>,
}

impl SnapshotSource for StoreSource<'_> {
    fn rows_at(&self, v: Version) -> Result<Dataset, ViewError> {
        if self.sealed.is_none_or(|s| v.epoch > s) {
            return Err(ViewError::SnapshotNotAvailable { requested: v, global: self.sealed });
        }
        if let Some(s) = self.stores.iter().find(|s| !s.retains(v)) {
            let compacted_to = s.compacted_to().expect("compacted store");
            return Err(ViewError::SourceUnavailable { requested: v, compacted_to });
        }
        Ok(crate::store::SnapshotHandle::over(self.stores.clone(), v).to_rows())
    }
}

type OpFn = dyn Fn(&[Dataset], &Params) -> Result<Dataset, String> + Send + Sync;

#[derive(Clone)]
pub struct Operator {
    pub id: String,
    pub arity: usize,
    pub deterministic: bool,
    pub sample_params: Params,
    func: Arc<OpFn>,
}

impl Operator {
    pub fn new(
        id: impl Into<String>,
        arity: usize,
        func: impl Fn(&[Dataset], &Params) -> Result<Dataset, String> + Send + Sync + 'static,
    ) -> Self {
        Self { id: id.into(), arity, deterministic: true, sample_params: Params::new(), func: Arc::new(func) }
    }

    pub fn nondeterministic(mut self) -> Self {
        self.deterministic = false;
        self
    }

    pub fn sample_params(mut self, params: Params) -> Self {
        self.sample_params = params;
        self
    }

    pub fn call(&self, inputs: &[Dataset], params: &Params) -> Result<Dataset, ViewError> {
        if inputs.len() != self.arity {
            return Err(ViewError::BadArity { op: self.id.clone(), expected: self.arity, found: inputs.len() });
        }
        (self.func)(inputs, params).map_err(|message| ViewError::OperatorFailed { op: self.id.clone(), message })
    }
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operator").field("id", &self.id).field("arity", &self.arity).finish()
    }
}

fn self_test_input(i: usize) -> Dataset {
    [
        ("n/a#EXISTS".to_string(), Value::from(true)),
        ("n/b#EXISTS".to_string(), Value::from(true)),
        ("n/a.name".to_string(), Value::from(format!("x{i}"))),
        ("e/a>b/knows#EXISTS".to_string(), Value::from(true)),
        ("e/b>a/knows#EXISTS".to_string(), Value::from(true)),
        ("k".to_string(), Value::Float(0.5)),
    ]
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, Default)]
pub struct OperatorRegistry {
    ops: BTreeMap<String, Operator>,
}

impl OperatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        for op in builtin_operators() {
            r.register(op).expect("builtin operators are deterministic");
        }
        r
    }

    /// Registers `op` after running it twice on a fixture and comparing
    /// the serialized outputs.
    pub fn register(&mut self, op: Operator) -> Result<(), ViewError> {
        if self.ops.contains_key(&op.id) {
            return Err(ViewError::DuplicateOperator(op.id));
        }
        if !op.deterministic {
            return Err(ViewError::NondeterministicOperator(op.id));
        }
        let inputs: Vec<Dataset> = (0..op.arity).map(self_test_input).collect();
        let a = op.call(&inputs, &op.sample_params).map(|d| serde_json::to_string(&d).expect("json"));
        let b = op.call(&inputs, &op.sample_params).map(|d| serde_json::to_string(&d).expect("json"));
        if a != b {
            return Err(ViewError::NondeterministicOperator(op.id));
        }
        self.ops.insert(op.id.clone(), op);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Operator> {
        self.ops.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ops.keys().map(String::as_str)
    }

    pub fn check(&self, lineage: &Lineage) -> Result<(), ViewError> {
        if let Lineage::Apply { op, args, .. } = lineage {
            let o = self.get(op).ok_or_else(|| ViewError::UnknownOperator(op.clone()))?;
            if o.arity != args.len() {
                return Err(ViewError::BadArity { op: op.clone(), expected: o.arity, found: args.len() });
            }
            args.iter().try_for_each(|a| self.check(a))?;
        }
        Ok(())
    }

    pub fn evaluate(&self, lineage: &Lineage, source: &dyn SnapshotSource) -> Result<Dataset, ViewError> {
        match lineage {
            Lineage::Source { version } => source.rows_at(*version),
            Lineage::Apply { op, args, params } => {
                let o = self.get(op).ok_or_else(|| ViewError::UnknownOperator(op.clone()))?;
                let inputs = args.iter().map(|a| self.evaluate(a, source)).collect::<Result<Vec<_>, _>>()?;
                o.call(&inputs, params)
            }
        }
    }
}

/// Splits a snapshot row key for an edge's existence marker into
/// `(src, dst)`.
fn edge_endpoints(key: &str) -> Option<(&str, &str)> {
    let body = key.strip_prefix("e/")?.strip_suffix("#EXISTS")?;
    let (pair, _slot) = body.rsplit_once('/')?;
    pair.split_once('>')
}

fn node_of_exists(key: &str) -> Option<&str> {
    key.strip_prefix("n/")?.strip_suffix("#EXISTS")
}

pub fn builtin_operators() -> Vec<Operator> {
    vec![
        Operator::new("identity", 1, |i, _| Ok(i[0].clone())),
        Operator::new("degree", 1, |i, _| {
            let mut out = Dataset::new();
            for key in i[0].keys() {
                if let Some(n) = node_of_exists(key) {
                    out.entry(n.to_string()).or_insert(Value::Int(0));
                }
            }
            for key in i[0].keys() {
                if let Some((s, d)) = edge_endpoints(key) {
                    for n in [s, d] {
                        if let Some(Value::Int(c)) = out.get_mut(n) {
                            *c += 1;
                        }
                    }
                }
            }
            Ok(out)
        }),
        Operator::new("select_prefix", 1, |i, p| {
            let prefix = p.get("prefix").and_then(Value::as_str).ok_or("missing string param `prefix`")?;
            Ok(i[0].iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect())
        })
        .sample_params(Params::from([("prefix".to_string(), Value::from("n/"))])),
        Operator::new("union", 2, |i, _| {
            let mut out = i[1].clone();
            out.extend(i[0].iter().map(|(k, v)| (k.clone(), v.clone())));
            Ok(out)
        }),
        Operator::new("count_values", 1, |i, _| {
            let mut out = Dataset::new();
            for v in i[0].values() {
                let e = out.entry(v.to_string()).or_insert(Value::Int(0));
                if let Value::Int(c) = e {
                    *c += 1;
                }
            }
            Ok(out)
        }),
        Operator::new("exists_only", 1, |i, _| {
            Ok(i[0].iter().filter(|(k, _)| k.ends_with("#EXISTS")).map(|(k, v)| (k.clone(), v.clone())).collect())
        }),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PartitionStatus {
    Materialized,
    Lost,
}

#[derive(Clone, Debug)]
struct ViewPartition {
    status: PartitionStatus,
    rows: Dataset,
}

/// A materialized view. Contents are fixed once built; the only state
/// change is losing and recovering partitions.
#[derive(Clone, Debug)]
pub struct DistributedView {
    pub id: ViewId,
    pub lineage: Lineage,
    partitions: Vec<ViewPartition>,
}

impl DistributedView {
    pub fn status(&self, p: PartitionId) -> PartitionStatus {
        self.partitions[p].status
    }

    pub fn partition_count(&self) -> usize {
        self.partitions.len()
    }
}

#[derive(Debug)]
pub struct ViewCatalog {
    registry: OperatorRegistry,
    map: PartitionMap,
    views: BTreeMap<ViewId, DistributedView>,
    materializations: u64,
}

impl ViewCatalog {
    pub fn new(registry: OperatorRegistry, map: PartitionMap) -> Self {
        Self { registry, map, views: BTreeMap::new(), materializations: 0 }
    }

    pub fn registry(&self) -> &OperatorRegistry {
        &self.registry
    }

    /// Number of full lineage evaluations performed so far.
    pub fn materializations(&self) -> u64 {
        self.materializations
    }

    pub fn view(&self, id: &ViewId) -> Option<&DistributedView> {
        self.views.get(id)
    }

    pub fn define(&mut self, lineage: Lineage, source: &dyn SnapshotSource) -> Result<ViewId, ViewError> {
        self.registry.check(&lineage)?;
        let id = lineage.id();
        if self.views.contains_key(&id) {
            return Ok(id);
        }
        let rows = self.registry.evaluate(&lineage, source)?;
        self.materializations += 1;
        let mut partitions =
            vec![ViewPartition { status: PartitionStatus::Materialized, rows: Dataset::new() }; self.map.partitions()];
        for (k, v) in rows {
            partitions[self.map.partition_of_str(&k)].rows.insert(k, v);
        }
        self.views.insert(id.clone(), DistributedView { id: id.clone(), lineage, partitions });
        Ok(id)
    }

    fn get(&self, id: &ViewId) -> Result<&DistributedView, ViewError> {
        self.views.get(id).ok_or_else(|| ViewError::UnknownView(id.clone()))
    }

    pub fn read(&self, id: &ViewId, key: &str) -> Result<Option<Value>, ViewError> {
        let view = self.get(id)?;
        let p = self.map.partition_of_str(key);
        let part = &view.partitions[p];
        if part.status == PartitionStatus::Lost {
            return Err(ViewError::PartitionLost { view: id.clone(), partition: p });
        }
        Ok(part.rows.get(key).cloned())
    }

    /// Simulates the failure of the machine holding partition `p`.
    pub fn lose(&mut self, id: &ViewId, p: PartitionId) -> Result<(), ViewError> {
        let view = self.views.get_mut(id).ok_or_else(|| ViewError::UnknownView(id.clone()))?;
        let part = &mut view.partitions[p];
        part.status = PartitionStatus::Lost;
        part.rows.clear();
        Ok(())
    }

    /// Replays the lineage and keeps the rows belonging to partition `p`.
    pub fn recover(&mut self, id: &ViewId, p: PartitionId, source: &dyn SnapshotSource) -> Result<(), ViewError> {
        let view = self.get(id)?;
        if view.partitions[p].status == PartitionStatus::Materialized {
            return Ok(());
        }
        let rows = self.registry.evaluate(&view.lineage, source)?;
        self.materializations += 1;
        let map = &self.map;
        let part_rows: Dataset = rows.into_iter().filter(|(k, _)| map.partition_of_str(k) == p).collect();
        let view = self.views.get_mut(id).expect("checked above");
        view.partitions[p] = ViewPartition { status: PartitionStatus::Materialized, rows: part_rows };
        Ok(())
    }

    pub fn rows(&self, id: &ViewId) -> Result<Dataset, ViewError> {
        let view = self.get(id)?;
        let mut out = Dataset::new();
        for (p, part) in view.partitions.iter().enumerate() {
            if part.status == PartitionStatus::Lost {
                return Err(ViewError::PartitionLost { view: id.clone(), partition: p });
            }
            out.extend(part.rows.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        Ok(out)
    }

    pub fn partition_rows(&self, id: &ViewId, p: PartitionId) -> Result<&Dataset, ViewError> {
        let view = self.get(id)?;
        let part = &view.partitions[p];
        if part.status == PartitionStatus::Lost {
            return Err(ViewError::PartitionLost { view: id.clone(), partition: p });
        }
        Ok(&part.rows)
    }

    /// JSON-lines export: a header carrying the lineage hash, then rows.
    pub fn export(&self, id: &ViewId) -> Result<String, ViewError> {
        let rows = self.rows(id)?;
        let header = serde_json::json!({ "view": id.0, "lineage": self.get(id)?.lineage });
        Ok(format!("{header}\n{}", export_rows(&rows)))
    }
}
