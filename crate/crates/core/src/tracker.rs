//! Local and global snapshot progress.
//!
//! The ingest node dispatches mutations to data nodes asynchronously. A
//! mutation of epoch `e` may be sent to a data node as soon as that node has
//! sealed its local snapshot of every epoch below `e`; there is no global
//! barrier, so mutations of different epochs are in flight at the same time.
//!
//! Message exchange (one ingest node, `M` data nodes, one announcement log):
//!
//! 1. ingest -> data node: `Mutation`, in per-target FIFO order. Mutations
//!    that fail the dispatch rule wait in the ingest node's per-target queue.
//! 2. ingest -> data node: `Close { epoch, count }` after the last epoch-`e`
//!    mutation for that node, on the same FIFO queue. Nodes that received no
//!    epoch-`e` mutations get `count = 0` and seal on the marker alone.
//! 3. data node -> log: `Seal { node, epoch }` once every announced mutation
//!    of the epoch is applied and the previous epoch is sealed.
//! 4. log -> ingest: the totally ordered announcement, which advances the
//!    ingest node's view of that data node and releases deferred mutations.
//!
//! Global progress is the minimum sealed epoch across data nodes, computed
//! by replaying the announcement log. The log stands in for a replicated
//! consensus state machine: it is a single totally ordered sequence, and the
//! interface only exposes append and ordered replay.

use std::collections::{BTreeMap, VecDeque};

use crate::stream::Mutation;
use crate::types::{EpochId, MachineId, Version};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DispatchState {
    Dispatched,
    Deferred,
}

/// A mutation of epoch `epoch` may be applied by a node that has sealed
/// every earlier epoch.
pub fn dispatch_rule(target_sealed: Option<EpochId>, epoch: EpochId) -> DispatchState {
    let ok = match epoch.checked_sub(1) {
        None => true,
        Some(prev) => target_sealed.is_some_and(|s| s >= prev),
    };
    if ok {
        DispatchState::Dispatched
    } else {
        DispatchState::Deferred
    }
}

/// Minimum sealed epoch across nodes; `None` if any node has sealed nothing.
pub fn global_progress(sealed: &[Option<EpochId>]) -> Option<EpochId> {
    sealed.iter().copied().try_fold(EpochId::MAX, |acc, s| s.map(|s| acc.min(s))).filter(|_| !sealed.is_empty())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrackerError {
    #[error("OutOfOrderSeal: node {node} cannot seal epoch {epoch} with sealed={sealed:?}")]
    OutOfOrderSeal { node: MachineId, epoch: EpochId, sealed: Option<EpochId> },
    #[error("UnappliedMutations: node {node} applied {applied} of {expected} mutations of epoch {epoch}")]
    UnappliedMutations { node: MachineId, epoch: EpochId, applied: u64, expected: u64 },
    #[error("EpochOpen: node {node} has not received the close marker for epoch {epoch}")]
    EpochOpen { node: MachineId, epoch: EpochId },
    #[error("UnknownTarget: no data node {0}")]
    UnknownTarget(MachineId),
    #[error("UnsafeApply: node {node} received {version} with sealed={sealed:?}")]
    UnsafeApply { node: MachineId, version: Version, sealed: Option<EpochId> },
    #[error("StreamEnded: snapshot {requested} can never exist; stream ended with global progress {global:?}")]
    StreamEnded { requested: Version, global: Option<EpochId> },
    #[error("SnapshotNotAvailable: snapshot {requested} needs epoch {} sealed, global progress is {global:?}", requested.epoch)]
    SnapshotNotAvailable { requested: Version, global: Option<EpochId> },
}

/// Per data node progress: sealed epoch plus per-epoch apply counts.
#[derive(Clone, Debug)]
pub struct NodeProgress {
    pub node: MachineId,
    sealed: Option<EpochId>,
    applied: BTreeMap<EpochId, u64>,
    expected: BTreeMap<EpochId, u64>,
}

impl NodeProgress {
    pub fn new(node: MachineId) -> Self {
        Self { node, sealed: None, applied: BTreeMap::new(), expected: BTreeMap::new() }
    }

    pub fn sealed(&self) -> Option<EpochId> {
        self.sealed
    }

    /// Records an applied mutation, refusing ones that violate the
    /// dispatch rule.
    pub fn record_apply(&mut self, version: Version) -> Result<(), TrackerError> {
        if dispatch_rule(self.sealed, version.epoch) == DispatchState::Deferred
            || self.sealed.is_some_and(|s| version.epoch <= s)
        {
            return Err(TrackerError::UnsafeApply { node: self.node, version, sealed: self.sealed });
        }
        *self.applied.entry(version.epoch).or_default() += 1;
        Ok(())
    }

    /// The ingest node announced that epoch `epoch` carried `count`
    /// mutations for this node.
    pub fn mark_closed(&mut self, epoch: EpochId, count: u64) {
        self.expected.insert(epoch, count);
    }

    pub fn seal_local(&mut self, epoch: EpochId) -> Result<(), TrackerError> {
        let in_order = match epoch.checked_sub(1) {
            None => self.sealed.is_none(),
            Some(prev) => self.sealed == Some(prev),
        };
        if !in_order {
            return Err(TrackerError::OutOfOrderSeal { node: self.node, epoch, sealed: self.sealed });
        }
        let expected = *self.expected.get(&epoch).ok_or(TrackerError::EpochOpen { node: self.node, epoch })?;
        let applied = self.applied.get(&epoch).copied().unwrap_or(0);
        if applied < expected {
            return Err(TrackerError::UnappliedMutations { node: self.node, epoch, applied, expected });
        }
        self.sealed = Some(epoch);
        self.applied.remove(&epoch);
        self.expected.remove(&epoch);
        Ok(())
    }

    /// Seals as many consecutive epochs as are complete. Returns the newly
    /// sealed epochs in order.
    pub fn try_seal(&mut self) -> Vec<EpochId> {
        let mut out = Vec::new();
        loop {
            let next = self.sealed.map_or(0, |s| s + 1);
            if self.seal_local(next).is_err() {
                break;
            }
            out.push(next);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SealAnnouncement {
    pub node: MachineId,
    pub epoch: EpochId,
}

/// Totally ordered log of seal announcements.
#[derive(Clone, Debug, Default)]
pub struct ConsensusLog {
    entries: Vec<SealAnnouncement>,
}

impl ConsensusLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: SealAnnouncement) -> usize {
        self.entries.push(entry);
        self.entries.len() - 1
    }

    pub fn entries(&self) -> &[SealAnnouncement] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// An observer's replay of the announcement log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalProgress {
    per_node: Vec<Option<EpochId>>,
    applied: usize,
}

impl GlobalProgress {
    pub fn new(nodes: usize) -> Self {
        Self { per_node: vec![None; nodes], applied: 0 }
    }

    pub fn replay(entries: &[SealAnnouncement], nodes: usize) -> Self {
        let mut g = Self::new(nodes);
        for e in entries {
            g.observe(*e);
        }
        g
    }

    pub fn observe(&mut self, entry: SealAnnouncement) {
        if let Some(slot) = self.per_node.get_mut(entry.node) {
            *slot = Some(slot.map_or(entry.epoch, |s| s.max(entry.epoch)));
        }
        self.applied += 1;
    }

    pub fn node(&self, node: MachineId) -> Option<EpochId> {
        self.per_node.get(node).copied().flatten()
    }

    pub fn sealed_global(&self) -> Option<EpochId> {
        global_progress(&self.per_node)
    }

    pub fn entries_seen(&self) -> usize {
        self.applied
    }
}

/// Items queued from the ingest node towards one data node.
#[derive(Clone, Debug, PartialEq)]
pub enum Outgoing {
    Mutation(Mutation),
    Close { epoch: EpochId, count: u64 },
}

/// Ingest-side dispatcher: per-target FIFO queues gated by the dispatch rule.
#[derive(Clone, Debug)]
pub struct Dispatcher {
    queues: Vec<VecDeque<Outgoing>>,
    known: Vec<Option<EpochId>>,
    counts: Vec<BTreeMap<EpochId, u64>>,
}

impl Dispatcher {
    pub fn new(nodes: usize) -> Self {
        Self { queues: vec![VecDeque::new(); nodes], known: vec![None; nodes], counts: vec![BTreeMap::new(); nodes] }
    }

    pub fn nodes(&self) -> usize {
        self.queues.len()
    }

    pub fn known_sealed(&self, node: MachineId) -> Option<EpochId> {
        self.known.get(node).copied().flatten()
    }

    /// Queues `m` for `target` and reports whether it left immediately.
    /// The returned items must be sent, in order.
    pub fn dispatch(&mut self, target: MachineId, m: Mutation) -> Result<(DispatchState, Vec<Outgoing>), TrackerError> {
        let queue = self.queues.get_mut(target).ok_or(TrackerError::UnknownTarget(target))?;
        *self.counts[target].entry(m.version.epoch).or_default() += 1;
        let blocked = !queue.is_empty();
        queue.push_back(Outgoing::Mutation(m));
        let released = self.pump(target);
        let state = if blocked || released.is_empty() { DispatchState::Deferred } else { DispatchState::Dispatched };
        Ok((state, released))
    }

    /// Queues the close marker of `epoch` for every node, returning what
    /// can be sent now per node.
    pub fn close_epoch(&mut self, epoch: EpochId) -> Vec<(MachineId, Vec<Outgoing>)> {
        (0..self.queues.len())
            .map(|n| {
                let count = self.counts[n].remove(&epoch).unwrap_or(0);
                self.queues[n].push_back(Outgoing::Close { epoch, count });
                (n, self.pump(n))
            })
            .collect()
    }

    /// The ingest node learned that `node` sealed `epoch`.
    pub fn on_sealed(&mut self, node: MachineId, epoch: EpochId) -> Vec<Outgoing> {
        if let Some(k) = self.known.get_mut(node) {
            *k = Some(k.map_or(epoch, |s| s.max(epoch)));
            self.pump(node)
        } else {
            Vec::new()
        }
    }

    fn pump(&mut self, node: MachineId) -> Vec<Outgoing> {
        let mut out = Vec::new();
        while let Some(front) = self.queues[node].front() {
            let ready = match front {
                Outgoing::Mutation(m) => dispatch_rule(self.known[node], m.version.epoch) == DispatchState::Dispatched,
                Outgoing::Close { .. } => true,
            };
            if !ready {
                break;
            }
            out.extend(self.queues[node].pop_front());
        }
        out
    }

    pub fn deferred(&self, node: MachineId) -> usize {
        self.queues.get(node).map_or(0, VecDeque::len)
    }

    pub fn total_deferred(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }
}
