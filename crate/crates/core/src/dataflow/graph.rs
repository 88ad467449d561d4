use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DataflowError, Protocol, ProtocolRegistry};
use crate::types::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexRole {
    Ingress,
    Egress,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexSpec {
    pub id: String,
    pub protocol: String,
    pub role: VertexRole,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
}

impl VertexSpec {
    pub fn new(id: impl Into<String>, protocol: impl Into<String>, role: VertexRole) -> Self {
        Self { id: id.into(), protocol: protocol.into(), role, params: BTreeMap::new() }
    }

    pub fn param(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.params.insert(name.into(), value.into());
        self
    }
}

/// One queue: the sender's output port `from` feeding `to`. Port order at a
/// vertex is the order its outgoing edges appear in the `GraphSpec`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
}

/// Graph description, as read from a graph spec file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub vertices: Vec<VertexSpec>,
    pub edges: Vec<EdgeSpec>,
    /// Egress-to-ingress pairs created by composition.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stitches: Vec<EdgeSpec>,
}

impl GraphSpec {
    pub fn vertex(mut self, v: VertexSpec) -> Self {
        self.vertices.push(v);
        self
    }

    pub fn edge(mut self, from: impl Into<String>, to: impl Into<String>) -> Self {
        self.edges.push(EdgeSpec { from: from.into(), to: to.into() });
        self
    }
}

/// A validated graph with protocols resolved.
#[derive(Clone, Debug)]
pub struct DataflowGraph {
    pub(crate) spec: GraphSpec,
    pub(crate) protocols: Vec<Arc<Protocol>>,
    pub(crate) index: BTreeMap<String, usize>,
    /// Outgoing edge indices per vertex, in port order.
    pub(crate) out_edges: Vec<Vec<usize>>,
    pub(crate) in_edges: Vec<Vec<usize>>,
    /// `stitch_out[egress] = ingress`.
    pub(crate) stitch_out: BTreeMap<usize, usize>,
    pub(crate) stitch_in: BTreeMap<usize, usize>,
}

impl DataflowGraph {
    pub fn build(spec: GraphSpec, registry: &ProtocolRegistry) -> Result<Self, DataflowError> {
        let protocols = spec
            .vertices
            .iter()
            .map(|v| {
                registry.get(&v.protocol).cloned().ok_or_else(|| DataflowError::UnknownProtocol(v.protocol.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::assemble(spec, protocols)
    }

    fn assemble(spec: GraphSpec, protocols: Vec<Arc<Protocol>>) -> Result<Self, DataflowError> {
        let mut index = BTreeMap::new();
        for (i, v) in spec.vertices.iter().enumerate() {
            if index.insert(v.id.clone(), i).is_some() {
                return Err(DataflowError::DuplicateVertex(v.id.clone()));
            }
        }
        let n = spec.vertices.len();
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (e, edge) in spec.edges.iter().enumerate() {
            let dangling =
                |reason| DataflowError::DanglingQueue { from: edge.from.clone(), to: edge.to.clone(), reason };
            let from = *index.get(&edge.from).ok_or_else(|| dangling("unknown sender"))?;
            let to = *index.get(&edge.to).ok_or_else(|| dangling("unknown receiver"))?;
            if spec.vertices[from].role == VertexRole::Egress {
                return Err(dangling("egress vertices only feed the external consumer"));
            }
            if spec.vertices[to].role == VertexRole::Ingress {
                return Err(dangling("ingress vertices only read external input"));
            }
            out_edges[from].push(e);
            in_edges[to].push(e);
        }
        if !spec.vertices.iter().any(|v| v.role == VertexRole::Ingress) {
            return Err(DataflowError::NoIngress("graph has no ingress vertex".into()));
        }
        if !spec.vertices.iter().any(|v| v.role == VertexRole::Egress) {
            return Err(DataflowError::NoEgress);
        }
        for (i, v) in spec.vertices.iter().enumerate() {
            if v.role != VertexRole::Ingress && in_edges[i].is_empty() {
                return Err(DataflowError::NoIngress(format!(
                    "vertex {} has no upstream and would read external input",
                    v.id
                )));
            }
        }
        let mut stitch_out = BTreeMap::new();
        let mut stitch_in = BTreeMap::new();
        for s in &spec.stitches {
            let (e, i) = (index[&s.from], index[&s.to]);
            stitch_out.insert(e, i);
            stitch_in.insert(i, e);
        }
        Ok(Self { spec, protocols, index, out_edges, in_edges, stitch_out, stitch_in })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn vertex_count(&self) -> usize {
        self.spec.vertices.len()
    }

    pub fn vertex_id(&self, i: usize) -> &str {
        &self.spec.vertices[i].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn role(&self, i: usize) -> VertexRole {
        self.spec.vertices[i].role
    }

    pub fn protocol(&self, i: usize) -> &Arc<Protocol> {
        &self.protocols[i]
    }

    /// Ingress vertices still fed from outside.
    pub fn external_ingresses(&self) -> Vec<&str> {
        (0..self.vertex_count())
            .filter(|i| self.role(*i) == VertexRole::Ingress && !self.stitch_in.contains_key(i))
            .map(|i| self.vertex_id(i))
            .collect()
    }

    /// Egress vertices still read from outside.
    pub fn external_egresses(&self) -> Vec<&str> {
        (0..self.vertex_count())
            .filter(|i| self.role(*i) == VertexRole::Egress && !self.stitch_out.contains_key(i))
            .map(|i| self.vertex_id(i))
            .collect()
    }

    pub(crate) fn downstream(&self, i: usize) -> Vec<usize> {
        self.out_edges[i].iter().map(|&e| self.index[&self.spec.edges[e].to]).collect()
    }

    pub(crate) fn upstream(&self, i: usize) -> Vec<usize> {
        self.in_edges[i].iter().map(|&e| self.index[&self.spec.edges[e].from]).collect()
    }
}

/// Unions `g1` and `g2`, feeding each listed egress of `g1` into the
/// paired ingress of `g2`. Pairs must carry the same record shape.
pub fn compose(
    g1: &DataflowGraph,
    g2: &DataflowGraph,
    stitching: &[(String, String)],
) -> Result<DataflowGraph, DataflowError> {
    let mut spec = GraphSpec {
        vertices: g1.spec.vertices.iter().chain(&g2.spec.vertices).cloned().collect(),
        edges: g1.spec.edges.iter().chain(&g2.spec.edges).cloned().collect(),
        stitches: g1.spec.stitches.iter().chain(&g2.spec.stitches).cloned().collect(),
    };
    let protocols: Vec<_> = g1.protocols.iter().chain(&g2.protocols).cloned().collect();
    let mut used = BTreeSet::new();
    for (egress, ingress) in stitching {
        let e = g1.index_of(egress).filter(|&i| g1.role(i) == VertexRole::Egress && !g1.stitch_out.contains_key(&i));
        let i = g2.index_of(ingress).filter(|&i| g2.role(i) == VertexRole::Ingress && !g2.stitch_in.contains_key(&i));
        let (Some(e), Some(i)) = (e, i) else {
            return Err(DataflowError::UnknownVertex(format!("{egress} -> {ingress}")));
        };
        let emits = g1.protocol(e).egress_shape.clone();
        let accepts = g2.protocol(i).ingress_shape.clone();
        if emits != accepts || !used.insert(ingress.clone()) {
            return Err(DataflowError::IncompatibleStitch {
                egress: egress.clone(),
                ingress: ingress.clone(),
                emits,
                accepts,
            });
        }
        spec.stitches.push(super::EdgeSpec { from: egress.clone(), to: ingress.clone() });
    }
    DataflowGraph::assemble(spec, protocols)
}
