//! Join-group-by over a maintained join view.
//!
//! The view keeps per-vertex adjacency valid at a watermark, plus a log of
//! structural deltas observed since. Refreshing replays the log up to the
//! target version; the result must equal a rebuild from the snapshot.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::store::{EntityId, Property};
use crate::stream::{Mutation, Props};
use crate::types::Version;

use super::{GraphSnapshot, ModelError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Out,
    In,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "delta", rename_all = "snake_case")]
pub enum StructuralDelta {
    AddNode { id: String },
    AddEdge { src: String, dst: String, slot: String, props: Props },
    DelEdge { src: String, dst: String, slot: String },
}

/// Adjacency entry key: neighbor, link slot, direction seen from the owner.
type AdjKey = (String, String, Direction);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct JoinView {
    /// `None` before any mutation.
    watermark: Option<Version>,
    adjacency: BTreeMap<String, BTreeMap<AdjKey, Props>>,
    log: Vec<(Version, StructuralDelta)>,
    /// Deltas at or below this version were discarded.
    log_start: Option<Version>,
}

impl JoinView {
    /// A view of the empty graph that has seen nothing.
    pub fn new() -> Self {
        Self::default()
    }

    /// Full rebuild from a snapshot; the delta log starts empty at the
    /// snapshot version.
    pub fn rebuild(g: &GraphSnapshot) -> Self {
        let mut view = JoinView { watermark: Some(g.version), log_start: Some(g.version), ..Default::default() };
        for id in g.nodes.keys() {
            view.adjacency.entry(id.clone()).or_default();
        }
        for ((s, d, slot), props) in &g.links {
            view.link(s, d, slot, props);
        }
        view
    }

    pub fn watermark(&self) -> Option<Version> {
        self.watermark
    }

    pub fn log_len(&self) -> usize {
        self.log.len()
    }

    /// Records the structural part of `m`; property-only changes are ignored.
    pub fn observe(&mut self, m: &Mutation) {
        let exists = m.writes.iter().find(|(p, _)| *p == Property::Exists).map(|(_, v)| v.is_some());
        let delta = match (&m.entity, exists) {
            (EntityId::Node(id), Some(true)) => StructuralDelta::AddNode { id: id.clone() },
            (EntityId::Edge { src, dst, slot }, Some(true)) => {
                let props = m
                    .writes
                    .iter()
                    .filter_map(|(p, v)| match (p, v) {
                        (Property::Field(f), Some(v)) => Some((f.clone(), v.clone())),
                        _ => None,
                    })
                    .collect();
                StructuralDelta::AddEdge { src: src.clone(), dst: dst.clone(), slot: slot.clone(), props }
            }
            (EntityId::Edge { src, dst, slot }, Some(false)) => {
                StructuralDelta::DelEdge { src: src.clone(), dst: dst.clone(), slot: slot.clone() }
            }
            _ => return,
        };
        if self.watermark.is_some_and(|w| m.version <= w) {
            return;
        }
        self.log.push((m.version, delta));
    }

    /// Drops logged deltas at or below `up_to`.
    pub fn compact_log(&mut self, up_to: Version) {
        self.log.retain(|(v, _)| *v > up_to);
        self.log_start = Some(self.log_start.map_or(up_to, |s| s.max(up_to)));
    }

    fn link(&mut self, s: &str, d: &str, slot: &str, props: &Props) {
        self.adjacency
            .entry(s.to_string())
            .or_default()
            .insert((d.to_string(), slot.to_string(), Direction::Out), props.clone());
        self.adjacency
            .entry(d.to_string())
            .or_default()
            .insert((s.to_string(), slot.to_string(), Direction::In), props.clone());
    }

    fn unlink(&mut self, s: &str, d: &str, slot: &str) {
        if let Some(a) = self.adjacency.get_mut(s) {
            a.remove(&(d.to_string(), slot.to_string(), Direction::Out));
        }
        if let Some(a) = self.adjacency.get_mut(d) {
            a.remove(&(s.to_string(), slot.to_string(), Direction::In));
        }
    }

    /// Applies logged deltas in `(watermark, target]`.
    pub fn refresh(&mut self, target: Version) -> Result<(), ModelError> {
        let watermark = self.watermark.unwrap_or_default();
        if self.watermark.is_some_and(|w| w > target) {
            return Err(ModelError::ViewBehindSnapshot { watermark, requested: target });
        }
        if let Some(start) = self.log_start {
            if self.watermark.is_none_or(|w| w < start) {
                return Err(ModelError::DeltaGap { watermark, log_start: start });
            }
        }
        let mut log = std::mem::take(&mut self.log);
        log.sort_by_key(|(v, _)| *v);
        let split = log.partition_point(|(v, _)| *v <= target);
        for (_, delta) in log.drain(..split) {
            match delta {
                StructuralDelta::AddNode { id } => {
                    self.adjacency.entry(id).or_default();
                }
                StructuralDelta::AddEdge { src, dst, slot, props } => self.link(&src, &dst, &slot, &props),
                StructuralDelta::DelEdge { src, dst, slot } => self.unlink(&src, &dst, &slot),
            }
        }
        self.log = log;
        self.watermark = Some(target);
        self.log_start = Some(self.log_start.map_or(target, |s| s.max(target)));
        Ok(())
    }

    /// JSON-lines: the watermark, then one line per vertex with its
    /// adjacency sorted by (neighbor, slot, direction).
    pub fn export(&self) -> String {
        #[derive(Serialize)]
        struct Entry<'a> {
            neighbor: &'a str,
            slot: &'a str,
            direction: Direction,
            props: &'a Props,
        }
        #[derive(Serialize)]
        struct Line<'a> {
            vertex: &'a str,
            adjacency: Vec<Entry<'a>>,
        }
        let mut out = serde_json::json!({ "watermark": self.watermark }).to_string();
        out.push('\n');
        for (v, adj) in &self.adjacency {
            let adjacency = adj
                .iter()
                .map(|((n, slot, direction), props)| Entry { neighbor: n, slot, direction: *direction, props })
                .collect();
            out.push_str(&serde_json::to_string(&Line { vertex: v, adjacency }).expect("line serializes"));
            out.push('\n');
        }
        out
    }
}

/// One neighbor of a grouped vertex.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grouping {
    pub neighbor: String,
    pub direction: Direction,
    pub slot: String,
    pub neighbor_props: Props,
    pub edge_props: Props,
}

/// Groups every live vertex of `snapshot` with its neighbors, using `view`
/// (refreshed to the snapshot version if behind) for structure.
pub fn join_group_by(
    snapshot: &GraphSnapshot,
    view: &mut JoinView,
) -> Result<BTreeMap<String, Vec<Grouping>>, ModelError> {
    if view.watermark != Some(snapshot.version) {
        view.refresh(snapshot.version).map_err(|e| match e {
            ModelError::DeltaGap { watermark, .. } | ModelError::ViewBehindSnapshot { watermark, .. } => {
                ModelError::ViewBehindSnapshot { watermark, requested: snapshot.version }
            }
            other => other,
        })?;
    }
    let mut out = BTreeMap::new();
    for id in snapshot.nodes.keys() {
        let groups = view
            .adjacency
            .get(id)
            .into_iter()
            .flatten()
            .map(|((n, slot, direction), edge_props)| Grouping {
                neighbor: n.clone(),
                direction: *direction,
                slot: slot.clone(),
                neighbor_props: snapshot.nodes.get(n).cloned().unwrap_or_default(),
                edge_props: edge_props.clone(),
            })
            .collect();
        out.insert(id.clone(), groups);
    }
    Ok(out)
}
