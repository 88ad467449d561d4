//! Partition placement, replica coherence and access-driven migration.
//!
//! Every partition has exactly one primary replica, which accepts all
//! writes. Secondaries are installed on machines that read a partition
//! remotely and are kept coherent by update propagation (or invalidation,
//! depending on [`CoherenceMode`]). At window boundaries the manager swaps
//! primaries toward heavy requesters, rebalances with a two-term cost model
//! and collects idle secondaries.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::store::{DataKey, StoreError, VersionedStore};
use crate::types::{stable_hash, MachineId, Value, Version};

pub type PartitionId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceMode {
    /// Writes are pushed to every secondary.
    Propagate,
    /// Writes mark secondaries invalid; the next local read refetches.
    Invalidate,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicaConfig {
    pub partitions: usize,
    pub machines: usize,
    pub swap_ratio: f64,
    pub swap_windows: usize,
    pub gc_windows: u64,
    pub max_moves: usize,
    pub alpha: f64,
    pub beta: f64,
    pub mode: CoherenceMode,
    /// Simulated ticks between a primary write and its arrival at a secondary.
    pub propagation_latency: u64,
    pub auto_swap: bool,
    pub auto_rebalance: bool,
    pub auto_gc: bool,
}

impl ReplicaConfig {
    pub fn new(machines: usize) -> Self {
        let partitions = 64;
        Self {
            partitions,
            machines,
            swap_ratio: 2.0,
            swap_windows: 2,
            gc_windows: 3,
            max_moves: partitions / 8,
            alpha: 1.0,
            beta: 1.0,
            mode: CoherenceMode::Propagate,
            propagation_latency: 1,
            auto_swap: true,
            auto_rebalance: true,
            auto_gc: true,
        }
    }

    pub fn with_partitions(mut self, partitions: usize) -> Self {
        self.partitions = partitions;
        self.max_moves = (partitions / 8).max(1);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplicaError {
    #[error("NotPrimary: machine {machine} is not the primary of partition {partition} (owner {owner})")]
    NotPrimary { partition: PartitionId, machine: MachineId, owner: MachineId },
    #[error("UnknownMachine: {0}")]
    UnknownMachine(MachineId),
    #[error("Diverged: replica of partition {partition} on machine {machine} disagrees with its primary at {version} for {key}")]
    Diverged { partition: PartitionId, machine: MachineId, version: Version, key: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Partition to owner map. Keys are assigned to partitions by stable hash
/// of their placement key, so a node's fields and its out-edges share a
/// partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionMap {
    owners: Vec<MachineId>,
    machines: usize,
    version: u64,
}

impl PartitionMap {
    pub fn new(partitions: usize, machines: usize) -> Self {
        assert!(partitions > 0 && machines > 0, "empty partition map");
        Self { owners: (0..partitions).map(|p| p % machines).collect(), machines, version: 0 }
    }

    pub fn partitions(&self) -> usize {
        self.owners.len()
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn partition_of_str(&self, placement_key: &str) -> PartitionId {
        (stable_hash(placement_key.as_bytes()) % self.owners.len() as u64) as PartitionId
    }

    pub fn partition_of(&self, key: &DataKey) -> PartitionId {
        self.partition_of_str(key.entity.placement_key())
    }

    pub fn owner(&self, p: PartitionId) -> MachineId {
        self.owners[p]
    }

    pub fn place(&self, key: &DataKey) -> MachineId {
        self.owner(self.partition_of(key))
    }

    pub fn owned_by(&self, m: MachineId) -> impl Iterator<Item = PartitionId> + '_ {
        self.owners.iter().enumerate().filter(move |(_, o)| **o == m).map(|(p, _)| p)
    }

    fn migrate(&mut self, p: PartitionId, to: MachineId) {
        self.owners[p] = to;
        self.version += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Primary,
    Secondary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Valid,
    Invalid,
}

#[derive(Clone, Debug)]
pub struct Replica {
    pub role: Role,
    pub status: Status,
    pub applied_up_to: Option<Version>,
    pub store: VersionedStore<Value>,
    pending: u64,
    last_touch: u64,
}

impl Replica {
    fn new(role: Role, window: u64) -> Self {
        Self {
            role,
            status: Status::Valid,
            applied_up_to: None,
            store: VersionedStore::new(),
            pending: 0,
            last_touch: window,
        }
    }
}

/// Per-window access counters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AccessStats {
    pub counts: BTreeMap<(PartitionId, MachineId), u64>,
    pub remote: u64,
    pub total: u64,
}

impl AccessStats {
    pub fn get(&self, p: PartitionId, m: MachineId) -> u64 {
        self.counts.get(&(p, m)).copied().unwrap_or(0)
    }

    pub fn record(&mut self, p: PartitionId, m: MachineId, remote: bool) {
        *self.counts.entry((p, m)).or_default() += 1;
        self.total += 1;
        if remote {
            self.remote += 1;
        }
    }
}

/// Two-term cost: load imbalance plus the remote share of accesses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostModel {
    pub alpha: f64,
    pub beta: f64,
}

impl CostModel {
    pub fn imbalance(loads: &[u64]) -> f64 {
        let (Some(max), Some(min)) = (loads.iter().max(), loads.iter().min()) else {
            return 0.0;
        };
        let sum: u64 = loads.iter().sum();
        if sum == 0 {
            return 0.0;
        }
        let mean = sum as f64 / loads.len() as f64;
        (max - min) as f64 / mean
    }

    /// Remote fraction of the window's accesses if `owners` were the map.
    pub fn remote_ratio(owners: &[MachineId], stats: &AccessStats) -> f64 {
        let total: u64 = stats.counts.values().sum();
        if total == 0 {
            return 0.0;
        }
        let remote: u64 = stats.counts.iter().filter(|((p, m), _)| owners[*p] != *m).map(|(_, c)| *c).sum();
        remote as f64 / total as f64
    }

    pub fn cost(&self, owners: &[MachineId], part_loads: &[u64], machines: usize, stats: &AccessStats) -> f64 {
        let mut loads = vec![0u64; machines];
        for (p, &o) in owners.iter().enumerate() {
            loads[o] += part_loads[p];
        }
        self.alpha * Self::imbalance(&loads) + self.beta * Self::remote_ratio(owners, stats)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Migration {
    pub partition: PartitionId,
    pub from: MachineId,
    pub to: MachineId,
    pub cost_before: f64,
    pub cost_after: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwapDecision {
    Swapped(MachineId),
    Hold,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowMetrics {
    pub window: u64,
    pub cost: f64,
    pub loads: Vec<u64>,
    pub remote_ratio: f64,
    pub accesses: u64,
    pub swaps: usize,
    pub migrations: usize,
    pub gc: usize,
    pub cost_after: f64,
    pub map_version: u64,
}

#[derive(Clone, Debug)]
struct Propagation {
    deliver_at: u64,
    partition: PartitionId,
    machine: MachineId,
    key: DataKey,
    version: Version,
    value: Option<Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MonitorReport {
    pub single_primary_violations: u64,
    pub monotone_read_violations: u64,
    pub reads: u64,
    pub local_reads: u64,
    pub remote_reads: u64,
    pub propagations: u64,
}

impl MonitorReport {
    pub fn clean(&self) -> bool {
        self.single_primary_violations == 0 && self.monotone_read_violations == 0
    }
}

pub struct ReplicaManager {
    config: ReplicaConfig,
    cost: CostModel,
    map: PartitionMap,
    replicas: Vec<BTreeMap<MachineId, Replica>>,
    in_flight: VecDeque<Propagation>,
    now: u64,
    stable: Option<Version>,
    window: u64,
    current: AccessStats,
    history: VecDeque<AccessStats>,
    last_read: BTreeMap<(MachineId, DataKey), (Version, Option<Version>)>,
    monitor: MonitorReport,
    metrics: Vec<WindowMetrics>,
}

impl ReplicaManager {
    pub fn new(config: ReplicaConfig) -> Self {
        let map = PartitionMap::new(config.partitions, config.machines);
        let replicas =
            (0..config.partitions).map(|p| BTreeMap::from([(map.owner(p), Replica::new(Role::Primary, 0))])).collect();
        Self {
            cost: CostModel { alpha: config.alpha, beta: config.beta },
            config,
            map,
            replicas,
            in_flight: VecDeque::new(),
            now: 0,
            stable: None,
            window: 0,
            current: AccessStats::default(),
            history: VecDeque::new(),
            last_read: BTreeMap::new(),
            monitor: MonitorReport::default(),
            metrics: Vec::new(),
        }
    }

    pub fn config(&self) -> &ReplicaConfig {
        &self.config
    }

    pub fn map(&self) -> &PartitionMap {
        &self.map
    }

    pub fn place(&self, key: &DataKey) -> MachineId {
        self.map.place(key)
    }

    pub fn replica(&self, p: PartitionId, m: MachineId) -> Option<&Replica> {
        self.replicas[p].get(&m)
    }

    pub fn replicas_of(&self, p: PartitionId) -> impl Iterator<Item = (MachineId, &Replica)> {
        self.replicas[p].iter().map(|(m, r)| (*m, r))
    }

    pub fn primary(&self, p: PartitionId) -> &Replica {
        &self.replicas[p][&self.map.owner(p)]
    }

    /// Primary stores, one per partition. Their key sets are disjoint.
    pub fn primary_stores(&self) -> Vec<&VersionedStore<Value>> {
        (0..self.map.partitions()).map(|p| &self.primary(p).store).collect()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn current_stats(&self) -> &AccessStats {
        &self.current
    }

    pub fn history(&self) -> impl Iterator<Item = &AccessStats> {
        self.history.iter()
    }

    pub fn monitor(&self) -> &MonitorReport {
        &self.monitor
    }

    pub fn metrics(&self) -> &[WindowMetrics] {
        &self.metrics
    }

    pub fn windows_closed(&self) -> u64 {
        self.window
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Declares that every write at or below `v` has reached its primary.
    /// A valid replica with nothing in flight is then complete through `v`.
    pub fn advance_stable(&mut self, v: Version) {
        self.stable = Some(self.stable.map_or(v, |s| s.max(v)));
    }

    /// Per-partition key counts at the primaries.
    pub fn partition_loads(&self) -> Vec<u64> {
        (0..self.map.partitions()).map(|p| self.primary(p).store.key_count() as u64).collect()
    }

    pub fn machine_loads(&self) -> Vec<u64> {
        let mut loads = vec![0; self.map.machines()];
        for (p, l) in self.partition_loads().into_iter().enumerate() {
            loads[self.map.owner(p)] += l;
        }
        loads
    }

    pub fn coherent_write(
        &mut self,
        at: MachineId,
        key: DataKey,
        version: Version,
        value: Option<Value>,
    ) -> Result<(), ReplicaError> {
        let p = self.map.partition_of(&key);
        let owner = self.map.owner(p);
        if at != owner {
            return Err(ReplicaError::NotPrimary { partition: p, machine: at, owner });
        }
        let primary = self.replicas[p].get_mut(&owner).expect("primary replica");
        primary.store.apply(key.clone(), version, value.clone())?;
        primary.applied_up_to = Some(version);
        let deliver_at = self.now + self.config.propagation_latency;
        for (&m, r) in self.replicas[p].iter_mut().filter(|(m, _)| **m != owner) {
            r.status = Status::Invalid;
            if self.config.mode == CoherenceMode::Propagate {
                r.pending += 1;
                self.in_flight.push_back(Propagation {
                    deliver_at,
                    partition: p,
                    machine: m,
                    key: key.clone(),
                    version,
                    value: value.clone(),
                });
            }
        }
        Ok(())
    }

    /// Delivers propagation messages due at or before `t`.
    pub fn advance_to(&mut self, t: u64) {
        self.now = self.now.max(t);
        while self.in_flight.front().is_some_and(|m| m.deliver_at <= self.now) {
            let msg = self.in_flight.pop_front().expect("front");
            self.deliver(msg);
        }
    }

    /// Delivers everything in flight.
    pub fn quiesce(&mut self) {
        let last = self.in_flight.back().map_or(self.now, |m| m.deliver_at);
        self.advance_to(last);
    }

    fn deliver(&mut self, msg: Propagation) {
        self.monitor.propagations += 1;
        let Some(r) = self.replicas[msg.partition].get_mut(&msg.machine) else {
            return;
        };
        if r.role == Role::Primary {
            return;
        }
        r.pending = r.pending.saturating_sub(1);
        // A refetch may already have copied this write.
        if r.store.latest(&msg.key).is_none_or(|l| l < msg.version) {
            r.store.apply(msg.key, msg.version, msg.value).expect("monotone propagation");
            r.applied_up_to = r.applied_up_to.max(Some(msg.version));
        }
        if r.pending == 0 {
            r.status = Status::Valid;
        }
    }

    fn fresh_through(&self, r: &Replica) -> Option<Version> {
        if r.status == Status::Valid && r.pending == 0 {
            r.applied_up_to.max(self.stable)
        } else {
            r.applied_up_to
        }
    }

    pub fn coherent_read(
        &mut self,
        machine: MachineId,
        key: &DataKey,
        v: Version,
    ) -> Result<Option<Value>, ReplicaError> {
        if machine >= self.map.machines() {
            return Err(ReplicaError::UnknownMachine(machine));
        }
        let p = self.map.partition_of(key);
        let owner = self.map.owner(p);
        let local_ok = machine == owner
            || self.replicas[p]
                .get(&machine)
                .is_some_and(|r| r.status == Status::Valid && self.fresh_through(r).is_some_and(|f| f >= v));
        if !local_ok {
            self.install_secondary(p, machine);
        }
        self.current.record(p, machine, !local_ok);
        self.monitor.reads += 1;
        if local_ok {
            self.monitor.local_reads += 1;
        } else {
            self.monitor.remote_reads += 1;
        }
        let window = self.window;
        let r = self.replicas[p].get_mut(&machine).expect("replica after read");
        r.last_touch = window;
        let entry = r.store.resolve_entry(key, v);
        let value = entry.and_then(|(_, val)| val.cloned());
        let seen = entry.map(|(ver, _)| ver);
        let mkey = (machine, key.clone());
        if let Some(&(prev_v, prev_seen)) = self.last_read.get(&mkey) {
            if v >= prev_v && seen < prev_seen {
                self.monitor.monotone_read_violations += 1;
            }
        }
        let slot = self.last_read.entry(mkey).or_insert((v, seen));
        if v >= slot.0 {
            *slot = (v, seen);
        }
        Ok(value)
    }

    /// Copies the primary's store into a secondary on `machine`.
    fn install_secondary(&mut self, p: PartitionId, machine: MachineId) {
        let owner = self.map.owner(p);
        let primary = &self.replicas[p][&owner];
        let store = primary.store.clone();
        let applied = primary.applied_up_to;
        let window = self.window;
        let r = self.replicas[p].entry(machine).or_insert_with(|| Replica::new(Role::Secondary, window));
        r.store = store;
        r.applied_up_to = applied;
        r.status = Status::Valid;
        r.pending = 0;
        self.in_flight.retain(|m| !(m.partition == p && m.machine == machine));
    }

    /// Moves the primary role of `p` to `to` in one map-version bump. The
    /// old primary stays as a valid secondary until collected.
    fn migrate(&mut self, p: PartitionId, to: MachineId) {
        let from = self.map.owner(p);
        if from == to {
            return;
        }
        self.install_secondary(p, to);
        self.replicas[p].get_mut(&to).expect("target").role = Role::Primary;
        self.replicas[p].get_mut(&from).expect("old primary").role = Role::Secondary;
        self.map.migrate(p, to);
        self.check_single_primary();
    }

    pub fn check_single_primary(&mut self) -> bool {
        let mut ok = true;
        for p in 0..self.map.partitions() {
            let prim: Vec<_> =
                self.replicas[p].iter().filter(|(_, r)| r.role == Role::Primary).map(|(m, _)| *m).collect();
            if prim != [self.map.owner(p)] {
                ok = false;
                self.monitor.single_primary_violations += 1;
            }
        }
        ok
    }

    /// Swap rule over the last `swap_windows` closed windows.
    pub fn swap_decision(&self, p: PartitionId) -> SwapDecision {
        let k = self.config.swap_windows;
        if self.history.len() < k || k == 0 {
            return SwapDecision::Hold;
        }
        let owner = self.map.owner(p);
        let recent: Vec<&AccessStats> = self.history.iter().rev().take(k).collect();
        let mut best: Option<(u64, MachineId)> = None;
        for m in (0..self.map.machines()).filter(|m| *m != owner) {
            let qualifies = recent.iter().all(|w| {
                let remote = w.get(p, m);
                remote > 0 && remote as f64 >= self.config.swap_ratio * w.get(p, owner) as f64
            });
            if qualifies {
                let total: u64 = recent.iter().map(|w| w.get(p, m)).sum();
                if best.is_none_or(|(t, _)| total > t) {
                    best = Some((total, m));
                }
            }
        }
        best.map_or(SwapDecision::Hold, |(_, m)| SwapDecision::Swapped(m))
    }

    pub fn maybe_swap(&mut self, p: PartitionId) -> SwapDecision {
        let d = self.swap_decision(p);
        if let SwapDecision::Swapped(m) = d {
            self.migrate(p, m);
        }
        d
    }

    fn cost_on(&self, owners: &[MachineId], loads: &[u64], stats: &AccessStats) -> f64 {
        self.cost.cost(owners, loads, self.map.machines(), stats)
    }

    /// Cost of the current map on `stats`.
    pub fn cost_of(&self, stats: &AccessStats) -> f64 {
        self.cost_on(&self.map.owners, &self.partition_loads(), stats)
    }

    /// Greedy rebalance on `stats` (normally the last closed window).
    pub fn rebalance_with(&mut self, stats: &AccessStats) -> Vec<Migration> {
        let loads = self.partition_loads();
        let mut owners = self.map.owners.clone();
        let mut cost = self.cost_on(&owners, &loads, stats);
        let mut moves = Vec::new();
        while moves.len() < self.config.max_moves {
            let mut best: Option<(f64, PartitionId, MachineId)> = None;
            for p in 0..owners.len() {
                let from = owners[p];
                for to in (0..self.map.machines()).filter(|m| *m != from) {
                    owners[p] = to;
                    let c = self.cost_on(&owners, &loads, stats);
                    owners[p] = from;
                    if c < cost - 1e-12 && best.is_none_or(|(bc, _, _)| c < bc) {
                        best = Some((c, p, to));
                    }
                }
            }
            let Some((c, p, to)) = best else { break };
            moves.push(Migration { partition: p, from: owners[p], to, cost_before: cost, cost_after: c });
            owners[p] = to;
            cost = c;
        }
        for m in &moves {
            self.migrate(m.partition, m.to);
        }
        moves
    }

    pub fn rebalance(&mut self) -> Vec<Migration> {
        let stats = self.history.back().cloned().unwrap_or_default();
        self.rebalance_with(&stats)
    }

    /// Drops secondaries with no access in the last `gc_windows` windows.
    pub fn gc_replicas(&mut self) -> usize {
        let horizon = self.config.gc_windows;
        let closed = self.window;
        let mut collected = 0;
        for p in 0..self.map.partitions() {
            let doomed: BTreeSet<MachineId> = self.replicas[p]
                .iter()
                .filter(|(_, r)| r.role == Role::Secondary && closed >= r.last_touch + 1 + horizon)
                .map(|(m, _)| *m)
                .collect();
            for m in &doomed {
                self.replicas[p].remove(m);
            }
            collected += doomed.len();
            self.in_flight.retain(|msg| !(msg.partition == p && doomed.contains(&msg.machine)));
        }
        collected
    }

    /// Closes the current access window and runs swap, rebalance and gc.
    pub fn end_window(&mut self) -> WindowMetrics {
        let stats = std::mem::take(&mut self.current);
        let cost = self.cost_of(&stats);
        let loads = self.machine_loads();
        let remote_ratio = if stats.total == 0 { 0.0 } else { stats.remote as f64 / stats.total as f64 };
        let accesses = stats.total;
        self.history.push_back(stats);
        let keep = self.config.swap_windows.max(1);
        while self.history.len() > keep {
            self.history.pop_front();
        }
        self.window += 1;
        let mut swaps = 0;
        if self.config.auto_swap {
            for p in 0..self.map.partitions() {
                if matches!(self.maybe_swap(p), SwapDecision::Swapped(_)) {
                    swaps += 1;
                }
            }
        }
        let migrations = if self.config.auto_rebalance { self.rebalance().len() } else { 0 };
        let gc = if self.config.auto_gc { self.gc_replicas() } else { 0 };
        let last = self.history.back().cloned().unwrap_or_default();
        let m = WindowMetrics {
            window: self.window - 1,
            cost,
            loads,
            remote_ratio,
            accesses,
            swaps,
            migrations,
            gc,
            cost_after: self.cost_of(&last),
            map_version: self.map.version(),
        };
        self.metrics.push(m.clone());
        m
    }

    /// Checks every valid, settled replica against its primary at `probes`.
    pub fn check_convergence(&self, probes: &[Version]) -> Result<(), ReplicaError> {
        for p in 0..self.map.partitions() {
            let primary = self.primary(p);
            for (m, r) in self.replicas_of(p) {
                if r.role == Role::Primary || r.status != Status::Valid {
                    continue;
                }
                let keys: BTreeSet<&DataKey> = primary.store.keys().chain(r.store.keys()).collect();
                for &v in probes {
                    for key in &keys {
                        if primary.store.resolve(key, v) != r.store.resolve(key, v) {
                            return Err(ReplicaError::Diverged {
                                partition: p,
                                machine: m,
                                version: v,
                                key: key.to_string(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Compacts every replica; returns the number of dropped entries.
    pub fn compact(&mut self, keep: Version) -> usize {
        self.replicas.iter_mut().flat_map(|rs| rs.values_mut()).map(|r| r.store.compact(keep)).sum()
    }

    pub fn compacted_to(&self) -> Option<Version> {
        self.replicas.iter().flat_map(|rs| rs.values()).filter_map(|r| r.store.compacted_to()).max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::EntityId;

    fn key(id: &str) -> DataKey {
        DataKey::field(EntityId::node(id), "x")
    }

    /// A key whose partition is owned by `m` under the current map.
    fn key_on(rm: &ReplicaManager, m: MachineId, skip: usize) -> DataKey {
        (0..).map(|i| key(&format!("k{i}"))).filter(|k| rm.place(k) == m).nth(skip).unwrap()
    }

    #[test]
    fn placement_is_deterministic_and_balanced() {
        let map = PartitionMap::new(64, 4);
        assert_eq!(map.place(&key("a")), map.place(&key("a")));
        let mut per = [0u32; 4];
        for i in 0..10_000 {
            per[map.place(&key(&format!("n{i}")))] += 1;
        }
        for c in per {
            assert!((1875..=3125).contains(&c), "{per:?}");
        }
    }

    #[test]
    fn write_propagates_to_secondary() {
        let mut rm = ReplicaManager::new(ReplicaConfig::new(2));
        let k = key_on(&rm, 0, 0);
        let p = rm.map().partition_of(&k);
        rm.coherent_write(0, k.clone(), Version::new(0, 0), Some(1.into())).unwrap();
        assert_eq!(rm.coherent_read(1, &k, Version::new(0, 0)).unwrap(), Some(1.into()));
        rm.coherent_write(0, k.clone(), Version::new(0, 1), Some(2.into())).unwrap();
        assert_eq!(rm.replica(p, 1).unwrap().status, Status::Invalid);
        rm.quiesce();
        let r = rm.replica(p, 1).unwrap();
        assert_eq!(r.status, Status::Valid);
        assert_eq!(r.applied_up_to, Some(Version::new(0, 1)));
        assert_eq!(r.store.resolve(&k, Version::new(0, 1)), Some(&2.into()));
        rm.check_convergence(&[Version::new(0, 0), Version::new(0, 1)]).unwrap();
    }

    #[test]
    fn write_at_secondary_is_rejected() {
        let mut rm = ReplicaManager::new(ReplicaConfig::new(2));
        let k = key_on(&rm, 0, 0);
        let err = rm.coherent_write(1, k, Version::new(0, 0), None).unwrap_err();
        assert!(matches!(err, ReplicaError::NotPrimary { owner: 0, machine: 1, .. }));
    }

    #[test]
    fn first_remote_read_installs_secondary() {
        let mut rm = ReplicaManager::new(ReplicaConfig::new(2));
        let k = key_on(&rm, 0, 0);
        rm.coherent_write(0, k.clone(), Version::new(0, 0), Some(1.into())).unwrap();
        rm.coherent_read(0, &k, Version::new(0, 0)).unwrap();
        assert_eq!(rm.current_stats().remote, 0);
        rm.coherent_read(1, &k, Version::new(0, 0)).unwrap();
        assert_eq!(rm.current_stats().remote, 1);
        rm.coherent_read(1, &k, Version::new(0, 0)).unwrap();
        assert_eq!(rm.current_stats().remote, 1);
    }

    #[test]
    fn stale_replica_reads_remotely() {
        let mut rm = ReplicaManager::new(ReplicaConfig::new(2));
        let k = key_on(&rm, 0, 0);
        rm.coherent_write(0, k.clone(), Version::new(0, 3), Some(1.into())).unwrap();
        rm.coherent_read(1, &k, Version::new(0, 3)).unwrap();
        rm.coherent_read(1, &k, Version::new(0, 5)).unwrap();
        assert_eq!(rm.current_stats().remote, 2);
    }

    #[test]
    fn invalidate_mode_refetches() {
        let mut cfg = ReplicaConfig::new(2);
        cfg.mode = CoherenceMode::Invalidate;
        let mut rm = ReplicaManager::new(cfg);
        let k = key_on(&rm, 0, 0);
        rm.coherent_write(0, k.clone(), Version::new(0, 0), Some(1.into())).unwrap();
        rm.coherent_read(1, &k, Version::new(0, 0)).unwrap();
        rm.coherent_write(0, k.clone(), Version::new(0, 1), Some(2.into())).unwrap();
        assert_eq!(rm.in_flight(), 0);
        assert_eq!(rm.coherent_read(1, &k, Version::new(0, 1)).unwrap(), Some(2.into()));
        assert_eq!(rm.current_stats().remote, 2);
    }

    fn stats(entries: &[((PartitionId, MachineId), u64)]) -> AccessStats {
        let mut s = AccessStats::default();
        for &(k, c) in entries {
            s.counts.insert(k, c);
            s.total += c;
        }
        s
    }

    #[test]
    fn swap_rule() {
        let mut cfg = ReplicaConfig::new(2);
        cfg.auto_rebalance = false;
        cfg.auto_gc = false;
        cfg.auto_swap = false;
        let mut rm = ReplicaManager::new(cfg);
        rm.history.push_back(stats(&[((0, 1), 90), ((0, 0), 10)]));
        rm.history.push_back(stats(&[((0, 1), 90), ((0, 0), 10)]));
        assert_eq!(rm.swap_decision(0), SwapDecision::Swapped(1));
        rm.history.clear();
        rm.history.push_back(stats(&[((0, 1), 15), ((0, 0), 10)]));
        rm.history.push_back(stats(&[((0, 1), 15), ((0, 0), 10)]));
        assert_eq!(rm.swap_decision(0), SwapDecision::Hold);
        rm.history.clear();
        rm.history.push_back(AccessStats::default());
        rm.history.push_back(AccessStats::default());
        assert_eq!(rm.swap_decision(0), SwapDecision::Hold);
        rm.history.clear();
        rm.history.push_back(stats(&[((0, 1), 90), ((0, 0), 10)]));
        rm.history.push_back(stats(&[((0, 1), 90), ((0, 0), 10)]));
        let v = rm.map().version();
        assert_eq!(rm.maybe_swap(0), SwapDecision::Swapped(1));
        assert_eq!(rm.map().owner(0), 1);
        assert_eq!(rm.map().version(), v + 1);
        assert!(rm.check_single_primary());
    }

    #[test]
    fn balanced_idle_cluster_does_not_move() {
        let mut rm = ReplicaManager::new(ReplicaConfig::new(4).with_partitions(8));
        for m in 0..4 {
            for i in 0..2 {
                let k = key_on(&rm, m, i);
                let p = rm.map().partition_of(&k);
                // One key per partition keeps loads equal.
                if rm.primary(p).store.key_count() == 0 {
                    rm.coherent_write(m, k, Version::new(0, 0), Some(1.into())).unwrap();
                }
            }
        }
        let loads = rm.machine_loads();
        if loads.iter().all(|l| *l == loads[0]) {
            assert!(rm.rebalance_with(&AccessStats::default()).is_empty());
        }
    }

    #[test]
    fn skewed_rebalance_is_monotone() {
        let mut rm = ReplicaManager::new(ReplicaConfig::new(4));
        for i in 0..400 {
            let k = key_on(&rm, 0, i);
            rm.coherent_write(0, k, Version::new(0, i as u64), Some(1.into())).unwrap();
        }
        assert_eq!(rm.machine_loads(), vec![400, 0, 0, 0]);
        let moves = rm.rebalance_with(&AccessStats::default());
        assert_eq!(moves.len(), 8);
        let mut prev = f64::INFINITY;
        for m in &moves {
            assert!(m.cost_after < m.cost_before && m.cost_before <= prev);
            prev = m.cost_after;
        }
        assert!(rm.check_single_primary());
    }

    #[test]
    fn alpha_zero_chases_traffic() {
        let mut cfg = ReplicaConfig::new(2).with_partitions(4);
        cfg.alpha = 0.0;
        let mut rm = ReplicaManager::new(cfg);
        let moves = rm.rebalance_with(&stats(&[((0, 1), 50), ((0, 0), 5)]));
        assert_eq!(moves.len(), 1);
        assert_eq!((moves[0].partition, moves[0].to), (0, 1));
    }

    #[test]
    fn gc_collects_idle_secondaries_only() {
        let mut cfg = ReplicaConfig::new(3);
        cfg.auto_swap = false;
        cfg.auto_rebalance = false;
        let mut rm = ReplicaManager::new(cfg);
        let k = key_on(&rm, 0, 0);
        let p = rm.map().partition_of(&k);
        rm.coherent_write(0, k.clone(), Version::new(0, 0), Some(1.into())).unwrap();
        rm.coherent_read(1, &k, Version::new(0, 0)).unwrap();
        rm.coherent_read(2, &k, Version::new(0, 0)).unwrap();
        for w in 0..4 {
            rm.coherent_read(2, &k, Version::new(0, 0)).unwrap();
            let m = rm.end_window();
            assert_eq!(m.gc, usize::from(w == 3), "window {w}");
        }
        assert!(rm.replica(p, 1).is_none());
        assert!(rm.replica(p, 2).is_some());
        assert!(rm.replica(p, 0).is_some());
    }
}
