//! Synthetic mutation-stream generators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::schema::{DeclKind, FieldDecl, LinkSlot, SchemaLine, SchemaTag};
use crate::stream::{render_stream, Props, StreamOp, StreamRecord};
use crate::types::{EpochId, Value, ValueKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenKind {
    CitationGrowth,
    PreferentialAttachment,
    RandomChurn,
}

impl FromStr for GenKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "citation-growth" => Ok(GenKind::CitationGrowth),
            "preferential-attachment" => Ok(GenKind::PreferentialAttachment),
            "random-churn" => Ok(GenKind::RandomChurn),
            other => Err(format!("unknown generator {other:?}")),
        }
    }
}

impl fmt::Display for GenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenKind::CitationGrowth => "citation-growth",
            GenKind::PreferentialAttachment => "preferential-attachment",
            GenKind::RandomChurn => "random-churn",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenParams {
    pub epochs: u64,
    /// New nodes per epoch.
    pub nodes: usize,
    /// Edges per new node.
    pub degree: usize,
    pub seed: u64,
}

impl GenParams {
    pub fn new(epochs: u64, seed: u64) -> Self {
        Self { epochs, nodes: 24, degree: 3, seed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub records: Vec<StreamRecord>,
    /// The vertex planted as the top degree gainer, with its epoch.
    pub planted: Option<(String, EpochId)>,
}

impl Generated {
    pub fn to_jsonl(&self) -> String {
        render_stream(&self.records)
    }
}

pub fn gen_stream(kind: GenKind, params: GenParams) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    match kind {
        GenKind::CitationGrowth => citation_growth(params, &mut rng),
        GenKind::PreferentialAttachment => preferential_attachment(params, &mut rng),
        GenKind::RandomChurn => random_churn(params, &mut rng),
    }
}

fn node_decl(
    name: &str,
    version: u32,
    parent: Option<u32>,
    fields: &[(&str, ValueKind)],
    links: &[(&str, &str)],
) -> StreamOp {
    StreamOp::Declare(SchemaLine {
        kind: DeclKind::Node,
        name: name.into(),
        version,
        parent,
        fields: fields.iter().map(|(n, k)| FieldDecl::new(*n, *k)).collect(),
        links: links.iter().map(|(s, t)| LinkSlot::new(*s, t.parse::<SchemaTag>().expect("static tag"))).collect(),
        source: None,
        target: None,
    })
}

fn add_node(id: &str, schema: Option<&str>, props: Props) -> StreamOp {
    StreamOp::AddNode { id: id.into(), schema: schema.map(|s| s.parse().expect("static tag")), props }
}

fn add_edge(src: &str, dst: &str, slot: &str, props: Props) -> StreamOp {
    StreamOp::AddEdge { src: src.into(), dst: dst.into(), slot: slot.into(), schema: None, props }
}

fn name(prefix: &str, i: usize) -> Props {
    Props::from([("name".to_string(), Value::Str(format!("{prefix} {i}")))])
}

/// Epoch in which the citation generator plants its top gainer.
pub const PLANTED_EPOCH: EpochId = 2;

/// Authors write papers which cite older papers. Epoch 2 introduces
/// schools and a second author schema that can link to them, and plants one
/// author who gains clearly more links than any other vertex.
fn citation_growth(p: GenParams, rng: &mut ChaCha8Rng) -> Generated {
    let mut out = vec![
        StreamRecord::new(0, node_decl("paper", 1, None, &[("title", ValueKind::String)], &[("cites", "paper@1")])),
        StreamRecord::new(0, node_decl("author", 1, None, &[("name", ValueKind::String)], &[("wrote", "paper@1")])),
    ];
    let (mut authors, mut papers) = (Vec::<String>::new(), Vec::<String>::new());
    let mut edges: BTreeSet<(String, String)> = BTreeSet::new();
    let mut planted = None;
    let per_epoch_authors = (p.nodes / 3).max(1);
    for e in 0..p.epochs {
        let mut ops: Vec<StreamOp> = Vec::new();
        let mut gain: BTreeMap<String, i64> = BTreeMap::new();
        let mut link = |ops: &mut Vec<StreamOp>, gain: &mut BTreeMap<String, i64>, s: &str, d: &str, slot: &str| {
            if edges.insert((s.to_string(), d.to_string())) {
                ops.push(add_edge(s, d, slot, Props::new()));
                *gain.entry(s.to_string()).or_default() += 1;
                *gain.entry(d.to_string()).or_default() += 1;
            }
        };
        if e == PLANTED_EPOCH {
            ops.push(node_decl("school", 1, None, &[("name", ValueKind::String)], &[]));
            ops.push(node_decl("author", 2, Some(1), &[], &[("belongs_to", "school@1")]));
            for s in 0..2 {
                ops.push(add_node(&format!("s{s}"), Some("school@1"), name("School", s)));
            }
        }
        for _ in 0..per_epoch_authors {
            let id = format!("a{}", authors.len());
            let schema = if e >= PLANTED_EPOCH { "author@2" } else { "author@1" };
            ops.push(add_node(&id, Some(schema), name("Author", authors.len())));
            if e >= PLANTED_EPOCH {
                let school = format!("s{}", rng.gen_range(0..2));
                link(&mut ops, &mut gain, &id, &school, "belongs_to");
            }
            authors.push(id);
        }
        let existing = papers.len();
        for _ in 0..p.nodes {
            let id = format!("p{}", papers.len());
            let title = Props::from([("title".to_string(), Value::Str(format!("paper {} on graphs", papers.len())))]);
            ops.push(add_node(&id, Some("paper@1"), title));
            let author = authors.choose(rng).expect("authors exist").clone();
            link(&mut ops, &mut gain, &author, &id, "wrote");
            if existing > 0 {
                for _ in 0..p.degree {
                    let cited = papers[rng.gen_range(0..existing)].clone();
                    link(&mut ops, &mut gain, &id, &cited, "cites");
                }
            }
            papers.push(id);
        }
        if e == PLANTED_EPOCH && existing > 0 {
            // The planted author: an older author that gains at least five
            // more links than anyone else this epoch.
            let star = authors[rng.gen_range(0..authors.len() - per_epoch_authors)].clone();
            let target = gain.iter().filter(|(v, _)| **v != star).map(|(_, g)| *g).max().unwrap_or(0) + 5;
            let mut order: Vec<usize> = (0..existing).collect();
            order.shuffle(rng);
            for i in order {
                if gain.get(&star).copied().unwrap_or(0) >= target {
                    break;
                }
                link(&mut ops, &mut gain, &star, &papers[i].clone(), "wrote");
            }
            planted = Some((star, e));
        }
        // Authors move to the second schema once it exists.
        if e == PLANTED_EPOCH {
            for (i, a) in authors.iter().enumerate().take(authors.len() - per_epoch_authors) {
                ops.push(StreamOp::UpdateNode {
                    id: a.clone(),
                    schema: Some("author@2".parse().expect("static tag")),
                    props: name("Author", i),
                });
            }
        }
        out.extend(ops.into_iter().map(|op| StreamRecord::new(e, op)));
        out.push(StreamRecord::new(e, StreamOp::EpochClose));
    }
    Generated { records: out, planted }
}

/// Each epoch adds `nodes` vertices; each attaches `degree` weighted edges
/// to earlier vertices picked proportionally to degree.
fn preferential_attachment(p: GenParams, rng: &mut ChaCha8Rng) -> Generated {
    let mut out = Vec::new();
    let mut ends: Vec<String> = Vec::new();
    let mut edges: BTreeSet<(String, String)> = BTreeSet::new();
    let mut n = 0usize;
    for e in 0..p.epochs {
        for _ in 0..p.nodes {
            let id = format!("v{n}");
            out.push(StreamRecord::new(e, add_node(&id, None, Props::new())));
            for _ in 0..p.degree.min(n) {
                let dst = if ends.is_empty() {
                    format!("v{}", rng.gen_range(0..n))
                } else {
                    ends.choose(rng).expect("ends").clone()
                };
                if dst != id && edges.insert((id.clone(), dst.clone())) {
                    let w = Props::from([("weight".to_string(), Value::Int(rng.gen_range(1..10)))]);
                    out.push(StreamRecord::new(e, add_edge(&id, &dst, "link", w)));
                    ends.push(id.clone());
                    ends.push(dst);
                }
            }
            n += 1;
        }
        out.push(StreamRecord::new(e, StreamOp::EpochClose));
    }
    Generated { records: out, planted: None }
}

/// A fixed vertex set created in epoch 0; every epoch adds and removes
/// random edges and updates a few vertex properties.
fn random_churn(p: GenParams, rng: &mut ChaCha8Rng) -> Generated {
    let mut out = Vec::new();
    let n = p.nodes.max(2);
    let mut live: Vec<(String, String)> = Vec::new();
    let mut set: BTreeSet<(String, String)> = BTreeSet::new();
    for e in 0..p.epochs {
        if e == 0 {
            for i in 0..n {
                let props = Props::from([("score".to_string(), Value::Int(0))]);
                out.push(StreamRecord::new(0, add_node(&format!("v{i}"), None, props)));
            }
        }
        for _ in 0..n * p.degree / 2 {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let key = (format!("v{a}"), format!("v{b}"));
            if a != b && set.insert(key.clone()) {
                let w = Props::from([("weight".to_string(), Value::Int(rng.gen_range(1..10)))]);
                out.push(StreamRecord::new(e, add_edge(&key.0, &key.1, "link", w)));
                live.push(key);
            }
        }
        for _ in 0..live.len() / 4 {
            let i = rng.gen_range(0..live.len());
            let (s, d) = live.swap_remove(i);
            set.remove(&(s.clone(), d.clone()));
            out.push(StreamRecord::new(e, StreamOp::DelEdge { src: s, dst: d, slot: "link".into() }));
        }
        for _ in 0..n / 5 {
            let v = rng.gen_range(0..n);
            let props = Props::from([("score".to_string(), Value::Int(rng.gen_range(0..100)))]);
            out.push(StreamRecord::new(e, StreamOp::UpdateNode { id: format!("v{v}"), schema: None, props }));
        }
        out.push(StreamRecord::new(e, StreamOp::EpochClose));
    }
    Generated { records: out, planted: None }
}
