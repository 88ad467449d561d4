//! Multi-version key-value substrate.
//!
//! Each data item keeps its full history as an ordered map from [`Version`]
//! to either a value or a tombstone. The snapshot at version `v` contains,
//! for every item `d`, the value written at `i_v`, the greatest version
//! *stored for `d`* that is `<= v`. The maximum is taken over the item's own
//! history: that is the only reading under which `d(i_v)` names an actual
//! stored value. Items whose `i_v` does not exist or is a tombstone are
//! absent from the snapshot.
//!
//! Versions are assigned globally by the ingest path, so histories of
//! different keys interleave in one version space. Appends must be strictly
//! increasing per key, which rules out ties when resolving.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::types::Version;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityId {
    Node(String),
    Edge { src: String, dst: String, slot: String },
}

impl EntityId {
    pub fn node(id: impl Into<String>) -> Self {
        EntityId::Node(id.into())
    }

    pub fn edge(src: impl Into<String>, dst: impl Into<String>, slot: impl Into<String>) -> Self {
        EntityId::Edge { src: src.into(), dst: dst.into(), slot: slot.into() }
    }

    /// The string hashed for partition placement. Edges are placed with
    /// their source node so out-adjacency stays on one machine.
    pub fn placement_key(&self) -> &str {
        match self {
            EntityId::Node(id) => id,
            EntityId::Edge { src, .. } => src,
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityId::Node(id) => write!(f, "n/{id}"),
            EntityId::Edge { src, dst, slot } => write!(f, "e/{src}>{dst}/{slot}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Property {
    /// Structural liveness marker, versioned independently from fields.
    Exists,
    Field(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DataKey {
    pub entity: EntityId,
    pub property: Property,
}

impl DataKey {
    pub fn exists(entity: EntityId) -> Self {
        Self { entity, property: Property::Exists }
    }

    pub fn field(entity: EntityId, name: impl Into<String>) -> Self {
        Self { entity, property: Property::Field(name.into()) }
    }
}

impl fmt::Display for DataKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.property {
            Property::Exists => write!(f, "{}#EXISTS", self.entity),
            Property::Field(name) => write!(f, "{}.{name}", self.entity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("NonMonotonicVersion: {key} already holds {latest}, cannot append {version}")]
    NonMonotonicVersion { key: String, version: Version, latest: Version },
}

/// A key's history. `None` entries are tombstones.
pub type History<V> = BTreeMap<Version, Option<V>>;

#[derive(Clone, Debug)]
pub struct VersionedStore<V> {
    cells: BTreeMap<DataKey, History<V>>,
    compacted_to: Option<Version>,
}

impl<V> Default for VersionedStore<V> {
    fn default() -> Self {
        Self { cells: BTreeMap::new(), compacted_to: None }
    }
}

impl<V: Clone> VersionedStore<V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `value` (or a tombstone for `None`) at `version`.
    pub fn apply(&mut self, key: DataKey, version: Version, value: Option<V>) -> Result<(), StoreError> {
        if let Some(latest) = self.latest(&key) {
            if version <= latest {
                return Err(StoreError::NonMonotonicVersion { key: key.to_string(), version, latest });
            }
        }
        self.cells.entry(key).or_default().insert(version, value);
        Ok(())
    }

    /// The stored version `i_v` chosen for `key` at `v`, with its entry.
    pub fn resolve_entry(&self, key: &DataKey, v: Version) -> Option<(Version, Option<&V>)> {
        let history = self.cells.get(key)?;
        history.range(..=v).next_back().map(|(ver, val)| (*ver, val.as_ref()))
    }

    pub fn resolve(&self, key: &DataKey, v: Version) -> Option<&V> {
        self.resolve_entry(key, v).and_then(|(_, val)| val)
    }

    pub fn snapshot(&self, v: Version) -> SnapshotHandle<'_, V> {
        SnapshotHandle::over(vec![self], v)
    }

    /// Drops, for every key, the versions strictly older than the one that
    /// resolves at `keep_at_or_below`. Resolution at or above the watermark
    /// is unchanged; below it, items may read as absent.
    pub fn compact(&mut self, keep_at_or_below: Version) -> usize {
        let mut dropped = 0;
        for history in self.cells.values_mut() {
            let Some((&pivot, _)) = history.range(..=keep_at_or_below).next_back() else {
                continue;
            };
            let kept = history.split_off(&pivot);
            dropped += history.len();
            *history = kept;
        }
        self.compacted_to = Some(self.compacted_to.map_or(keep_at_or_below, |c| c.max(keep_at_or_below)));
        dropped
    }

    /// Highest compaction watermark applied so far.
    pub fn compacted_to(&self) -> Option<Version> {
        self.compacted_to
    }

    /// Whether a snapshot at `v` is still exact after compaction.
    pub fn retains(&self, v: Version) -> bool {
        self.compacted_to.is_none_or(|c| v >= c)
    }

    pub fn history(&self, key: &DataKey) -> Option<&History<V>> {
        self.cells.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &DataKey> {
        self.cells.keys()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&DataKey, &History<V>)> {
        self.cells.iter()
    }

    pub fn key_count(&self) -> usize {
        self.cells.len()
    }

    pub fn entry_count(&self) -> usize {
        self.cells.values().map(BTreeMap::len).sum()
    }

    pub fn max_version(&self) -> Option<Version> {
        self.cells.values().filter_map(|h| h.last_key_value().map(|(v, _)| *v)).max()
    }

    /// Latest version stored for `key`.
    pub fn latest(&self, key: &DataKey) -> Option<Version> {
        self.cells.get(key).and_then(|h| h.last_key_value().map(|(v, _)| *v))
    }

    /// Removes every key matching `pred`, returning their histories.
    pub fn extract_where(&mut self, mut pred: impl FnMut(&DataKey) -> bool) -> Vec<(DataKey, History<V>)> {
        let keys: Vec<DataKey> = self.cells.keys().filter(|k| pred(k)).cloned().collect();
        keys.into_iter()
            .map(|k| {
                let h = self.cells.remove(&k).unwrap_or_default();
                (k, h)
            })
            .collect()
    }
}

/// A read-only view of one or more stores at a fixed watermark.
///
/// The stores must own disjoint key sets (each key lives on exactly one
/// data node). Because appends are strictly monotone per key, later
/// mutations carry versions above any watermark already sealed and never
/// change what a handle yields.
#[derive(Clone, Debug)]
pub struct SnapshotHandle<'a, V> {
    watermark: Version,
    stores: Vec<&'a VersionedStore<V>>,
}

impl<'a, V: Clone> SnapshotHandle<'a, V> {
    pub fn over(stores: Vec<&'a VersionedStore<V>>, watermark: Version) -> Self {
        Self { watermark, stores }
    }

    pub fn watermark(&self) -> Version {
        self.watermark
    }

    pub fn get(&self, key: &DataKey) -> Option<&'a V> {
        self.stores.iter().find_map(|s| s.resolve(key, self.watermark))
    }

    /// Every present `(key, value)` pair, sorted by key.
    pub fn entries(&self) -> Vec<(&'a DataKey, &'a V)> {
        let mut out: Vec<(&DataKey, &V)> = self
            .stores
            .iter()
            .flat_map(|s| {
                s.cells().filter_map(|(k, h)| {
                    let (_, val) = h.range(..=self.watermark).next_back()?;
                    val.as_ref().map(|val| (k, val))
                })
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    pub fn len(&self) -> usize {
        self.entries().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<V: Clone + Serialize> SnapshotHandle<'_, V> {
    /// Rows keyed by the display form of each key.
    pub fn to_rows(&self) -> BTreeMap<String, V> {
        self.entries().into_iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    /// JSON-lines export `{"key":...,"value":...}` sorted by key string.
    pub fn export_jsonl(&self) -> String {
        export_rows(&self.to_rows())
    }
}

/// Renders rows as JSON-lines `{"key":...,"value":...}` in map order.
pub fn export_rows<V: Serialize>(rows: &BTreeMap<String, V>) -> String {
    #[derive(Serialize)]
    struct Row<'r, V> {
        key: &'r str,
        value: &'r V,
    }
    let mut out = String::new();
    for (key, value) in rows {
        out.push_str(&serde_json::to_string(&Row { key, value }).expect("rows serialize"));
        out.push('\n');
    }
    out
}
