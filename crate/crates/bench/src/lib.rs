//! Deterministic fixtures for the engine benchmarks.

use protoflow_core::models::GraphSnapshot;
use protoflow_core::sim::{gen_stream, GenKind, GenParams};
use protoflow_core::{replay, stable_hash, Replayed, StreamRecord};

/// A generated stream of `epochs` epochs with `nodes` new nodes each.
pub fn stream(kind: GenKind, epochs: u64, nodes: usize, seed: u64) -> Vec<StreamRecord> {
    let mut params = GenParams::new(epochs, seed);
    params.nodes = nodes;
    gen_stream(kind, params).records
}

pub fn replayed(kind: GenKind, epochs: u64, nodes: usize, seed: u64) -> Replayed {
    replay(&stream(kind, epochs, nodes, seed)).expect("generated streams replay")
}

/// `n` vertices, each with `degree` out-links to hashed targets and
/// weights in `1..=16`.
pub fn hashed_graph(n: usize, degree: usize, seed: u64) -> GraphSnapshot {
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::with_capacity(n * degree);
    for i in 0..n {
        for k in 0..degree {
            let h = stable_hash(format!("{seed}/{i}/{k}").as_bytes());
            edges.push((i, (h % n as u64) as usize, (h >> 32) as i64 % 16 + 1));
        }
    }
    GraphSnapshot::from_edges(
        names.iter().map(String::as_str),
        edges.iter().map(|&(s, d, w)| (names[s].as_str(), names[d].as_str(), w)),
    )
}
