//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use protoflow_core::dataflow::{CausalEvent, EventId, Relation};
use protoflow_core::models::GraphSnapshot;
use protoflow_core::stream::{Props, StreamOp, StreamRecord};
use protoflow_core::Value;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Vertices `v0..v{n}` and `m` random directed edges with weights in
/// `0..=max_w`. Self-loops are allowed.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize, max_w: i64) -> GraphSnapshot {
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let edges: Vec<(usize, usize, i64)> =
        (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..=max_w))).collect();
    GraphSnapshot::from_edges(
        names.iter().map(String::as_str),
        edges.iter().map(|&(s, d, w)| (names[s].as_str(), names[d].as_str(), w)),
    )
}

/// A schemaless stream of `epochs` closed epochs over up to `nodes` vertices:
/// node adds, property updates, edge adds and deletes.
pub fn random_stream(rng: &mut ChaCha8Rng, epochs: u64, ops_per_epoch: usize, nodes: usize) -> Vec<StreamRecord> {
    let words = ["ant", "bee", "cat", "dog", "eel"];
    let mut live_nodes: Vec<String> = Vec::new();
    let mut live_edges: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut out = Vec::new();
    for e in 0..epochs {
        for _ in 0..ops_per_epoch {
            let roll = rng.gen_range(0..10);
            let op = if live_nodes.len() < 2 || (roll < 3 && live_nodes.len() < nodes) {
                let id = format!("n{}", live_nodes.len());
                live_nodes.push(id.clone());
                let text: Vec<&str> = (0..rng.gen_range(1..4)).map(|_| *words.choose(rng).unwrap()).collect();
                StreamOp::AddNode {
                    id,
                    schema: None,
                    props: Props::from([("text".into(), Value::from(text.join(" ")))]),
                }
            } else if roll < 5 {
                let id = live_nodes.choose(rng).unwrap().clone();
                StreamOp::UpdateNode {
                    id,
                    schema: None,
                    props: Props::from([("x".into(), Value::Int(rng.gen_range(0..100)))]),
                }
            } else if roll < 8 || live_edges.is_empty() {
                let s = live_nodes.choose(rng).unwrap().clone();
                let d = live_nodes.choose(rng).unwrap().clone();
                let slot = format!("s{}", rng.gen_range(0..2));
                if !live_edges.insert((s.clone(), d.clone(), slot.clone())) {
                    continue;
                }
                let props = Props::from([("weight".into(), Value::Int(rng.gen_range(1..10)))]);
                StreamOp::AddEdge { src: s, dst: d, slot, schema: None, props }
            } else {
                let pick = rng.gen_range(0..live_edges.len());
                let edge = live_edges.iter().nth(pick).unwrap().clone();
                live_edges.remove(&edge);
                StreamOp::DelEdge { src: edge.0, dst: edge.1, slot: edge.2 }
            };
            out.push(StreamRecord::new(e, op));
        }
        out.push(StreamRecord::new(e, StreamOp::EpochClose));
    }
    out
}

pub fn render(records: &[StreamRecord]) -> String {
    records.iter().map(|r| r.to_json() + "\n").collect()
}

/// Dense power iteration: `iterations` rounds from the uniform vector,
/// dangling mass spread uniformly. Parallel links count once.
pub fn dense_pagerank(g: &GraphSnapshot, iterations: u32, damping: f64) -> BTreeMap<String, f64> {
    let ids: Vec<&String> = g.nodes.keys().collect();
    let n = ids.len();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut adj = vec![vec![0.0f64; n]; n];
    for (s, d, _) in g.links.keys() {
        adj[index[s.as_str()]][index[d.as_str()]] = 1.0;
    }
    let outdeg: Vec<f64> = adj.iter().map(|row| row.iter().sum()).collect();
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..iterations {
        let dangling: f64 = (0..n).filter(|&i| outdeg[i] == 0.0).map(|i| x[i]).sum();
        let mut next = vec![(1.0 - damping) / n as f64 + damping * dangling / n as f64; n];
        for i in 0..n {
            for j in 0..n {
                if adj[i][j] > 0.0 {
                    next[j] += damping * x[i] / outdeg[i];
                }
            }
        }
        x = next;
    }
    ids.into_iter().cloned().zip(x).collect()
}

/// Bellman-Ford over the collapsed edge set; unreachable vertices absent.
pub fn bellman_ford(g: &GraphSnapshot, source: &str) -> BTreeMap<String, i64> {
    let edges = g.edges();
    let mut dist: BTreeMap<String, i64> = BTreeMap::from([(source.to_string(), 0)]);
    for _ in 0..g.vertex_count() {
        let mut changed = false;
        for ((s, d), w) in &edges {
            if let Some(&ds) = dist.get(s) {
                if dist.get(d).is_none_or(|&dd| ds + w < dd) {
                    dist.insert(d.clone(), ds + w);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    dist
}

/// Union-find over undirected links; each vertex maps to the smallest id
/// in its component.
pub fn union_find(g: &GraphSnapshot) -> BTreeMap<String, String> {
    let ids: Vec<&String> = g.nodes.keys().collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (s, d, _) in g.links.keys() {
        let (a, b) = (find(&mut parent, index[s.as_str()]), find(&mut parent, index[d.as_str()]));
        // Ids are sorted, so the smaller index is the smaller id.
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        parent[hi] = lo;
    }
    (0..ids.len()).map(|i| (ids[i].clone(), ids[find(&mut parent, i)].clone())).collect()
}

/// Sequential word count over whitespace-split lines.
pub fn group_by_words<'a>(lines: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, i64> {
    let mut out = BTreeMap::new();
    for line in lines {
        for w in line.split_whitespace() {
            *out.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    out
}

/// Transitive closure of `relation` over `events`: direct pairs from an
/// all-pairs scan, then reachability bitsets filled in reverse topological
/// order. Returns `None` if the relation has a cycle.
pub fn transitive_closure(events: &[CausalEvent], relation: &Relation) -> Option<Vec<BTreeSet<usize>>> {
    let n = events.len();
    let words = n.div_ceil(64);
    let direct: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| i != j && relation.related(&events[i], &events[j])).collect()).collect();
    let mut indeg = vec![0usize; n];
    for succ in &direct {
        for &j in succ {
            indeg[j] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(i) = queue.pop_front() {
        topo.push(i);
        for &j in &direct[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    if topo.len() != n {
        return None;
    }
    let mut reach = vec![vec![0u64; words]; n];
    for &i in topo.iter().rev() {
        let mut bits = vec![0u64; words];
        for &j in &direct[i] {
            bits[j / 64] |= 1 << (j % 64);
            for (b, r) in bits.iter_mut().zip(&reach[j]) {
                *b |= r;
            }
        }
        reach[i] = bits;
    }
    Some(reach.into_iter().map(|bits| (0..n).filter(|&j| bits[j / 64] >> (j % 64) & 1 == 1).collect()).collect())
}

/// Counts closure pairs `(a, b)` that the delivered order places with `b`
/// first, or that are missing from it. Zero means a linear extension.
pub fn linear_extension_violations(events: &[CausalEvent], order: &[EventId], closure: &[BTreeSet<usize>]) -> usize {
    let pos: BTreeMap<EventId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    if pos.len() != events.len() {
        return usize::MAX;
    }
    let mut bad = 0;
    for (i, succ) in closure.iter().enumerate() {
        for &j in succ {
            match (pos.get(&events[i].id), pos.get(&events[j].id)) {
                (Some(a), Some(b)) if a < b => {}
                _ => bad += 1,
            }
        }
    }
    bad
}
