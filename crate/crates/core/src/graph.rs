//! Computation-graph IR: primitive operator nodes joined by explicit
//! producer/consumer edges.
//!
//! Every node produces at most one tensor. A node fed by several producers
//! (only `Concat`) receives them through numbered input slots, and slot
//! order is concatenation order.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{ConvSpec, PoolKind};
use crate::error::GraphError;

pub type NodeId = usize;
pub type EdgeId = usize;

/// Value of the `schema` field of graph exports.
pub const GRAPH_SCHEMA: &str = "threshnet-graph/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub kernel: u32,
    pub stride: u32,
    pub padding: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    Input,
    Output,
    Conv(ConvSpec),
    BatchNorm,
    Relu,
    Concat,
    AvgPool(PoolSpec),
    MaxPool(PoolSpec),
    GlobalAvgPool,
    FullyConnected { classes: u32 },
}

impl Op {
    pub fn pool(kind: PoolKind, spec: PoolSpec) -> Op {
        match kind {
            PoolKind::Max => Op::MaxPool(spec),
            PoolKind::Avg => Op::AvgPool(spec),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Op::Input => "Input",
            Op::Output => "Output",
            Op::Conv(_) => "Conv",
            Op::BatchNorm => "BatchNorm",
            Op::Relu => "Relu",
            Op::Concat => "Concat",
            Op::AvgPool(_) => "AvgPool",
            Op::MaxPool(_) => "MaxPool",
            Op::GlobalAvgPool => "GlobalAvgPool",
            Op::FullyConnected { .. } => "FullyConnected",
        }
    }

    /// Whether the node counts towards network depth.
    pub fn is_weighted_layer(&self) -> bool {
        matches!(self, Op::Conv(_) | Op::FullyConnected { .. })
    }

    pub fn produces_tensor(&self) -> bool {
        !matches!(self, Op::Output)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Conv(c) => write!(
                f,
                "Conv {k}x{k}/{s} p{p} -> {o}{b}",
                k = c.kernel,
                s = c.stride,
                p = c.padding,
                o = c.out_channels,
                b = if c.has_bias { " +bias" } else { "" }
            ),
            Op::AvgPool(p) | Op::MaxPool(p) => write!(
                f,
                "{} {k}x{k}/{s} p{p}",
                self.kind_name(),
                k = p.kernel,
                s = p.stride,
                p = p.padding
            ),
            Op::FullyConnected { classes } => write!(f, "FullyConnected -> {classes}"),
            other => f.write_str(other.kind_name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpNode {
    pub id: NodeId,
    pub op: Op,
    pub name: String,
    pub block: Option<u32>,
    pub layer: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub producer: NodeId,
    pub consumer: NodeId,
    pub slot: u32,
}

/// Immutable, validated DAG. Construct with [`GraphBuilder`] or
/// [`ComputeGraph::new`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComputeGraph {
    nodes: Vec<OpNode>,
    edges: Vec<Edge>,
    topo_order: Vec<NodeId>,
    #[serde(skip)]
    in_edges: Vec<Vec<EdgeId>>,
    #[serde(skip)]
    out_edges: Vec<Vec<EdgeId>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    nodes: Vec<OpNode>,
    edges: Vec<Edge>,
    topo_order: Vec<NodeId>,
}

impl<'de> Deserialize<'de> for ComputeGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawGraph::deserialize(d)?;
        let graph = ComputeGraph::new(raw.nodes, raw.edges).map_err(serde::de::Error::custom)?;
        if !graph.is_topological(&raw.topo_order) {
            return Err(serde::de::Error::custom("topo_order is not a topological order"));
        }
        Ok(ComputeGraph {
            topo_order: raw.topo_order,
            ..graph
        })
    }
}

fn expected_arity(op: &Op) -> Option<usize> {
    match op {
        Op::Input => Some(0),
        Op::Concat => None,
        _ => Some(1),
    }
}

impl ComputeGraph {
    /// Validates ids, slots, arities and acyclicity, then derives a
    /// topological order (Kahn's algorithm, lowest id first).
    pub fn new(nodes: Vec<OpNode>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(GraphError::Malformed(format!("node at position {i} has id {}", node.id)));
            }
        }
        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        for (e, edge) in edges.iter().enumerate() {
            if edge.producer >= n || edge.consumer >= n {
                return Err(GraphError::Malformed(format!("edge {e} references a missing node")));
            }
            in_edges[edge.consumer].push(e);
            out_edges[edge.producer].push(e);
        }
        for (id, ins) in in_edges.iter_mut().enumerate() {
            ins.sort_by_key(|&e| edges[e].slot);
            for (slot, &e) in ins.iter().enumerate() {
                if edges[e].slot as usize != slot {
                    return Err(GraphError::Malformed(format!("node {id} has non-contiguous input slots")));
                }
            }
            let op = &nodes[id].op;
            match expected_arity(op) {
                Some(k) if k != ins.len() => {
                    return Err(GraphError::Malformed(format!(
                        "node {id} ({}) has {} inputs, expected {k}",
                        op.kind_name(),
                        ins.len()
                    )))
                }
                None if ins.is_empty() => {
                    return Err(GraphError::Malformed(format!("concat node {id} has no inputs")))
                }
                _ => {}
            }
            if matches!(op, Op::Output) && !out_edges[id].is_empty() {
                return Err(GraphError::Malformed(format!("output node {id} has successors")));
            }
        }
        let inputs = nodes.iter().filter(|n| n.op == Op::Input).count();
        let outputs = nodes.iter().filter(|n| n.op == Op::Output).count();
        if inputs != 1 || outputs != 1 {
            return Err(GraphError::Malformed(format!(
                "expected one Input and one Output node, found {inputs} and {outputs}"
            )));
        }

        let mut indegree: Vec<usize> = in_edges.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<NodeId> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut topo_order = Vec::with_capacity(n);
        while let Some(id) = ready.pop_first() {
            topo_order.push(id);
            for &e in &out_edges[id] {
                let c = edges[e].consumer;
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if topo_order.len() != n {
            return Err(GraphError::Cycle);
        }

        Ok(ComputeGraph {
            nodes,
            edges,
            topo_order,
            in_edges,
            out_edges,
        })
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &OpNode {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo_order
    }

    /// Incoming edges of `id`, ordered by slot.
    pub fn input_edges(&self, id: NodeId) -> &[EdgeId] {
        &self.in_edges[id]
    }

    pub fn output_edges(&self, id: NodeId) -> &[EdgeId] {
        &self.out_edges[id]
    }

    /// Producers feeding `id`, in slot order.
    pub fn inputs(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.in_edges[id].iter().map(|&e| self.edges[e].producer)
    }

    pub fn consumers(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.out_edges[id].iter().map(|&e| self.edges[e].consumer)
    }

    pub fn input_node(&self) -> NodeId {
        self.nodes.iter().position(|n| n.op == Op::Input).expect("validated")
    }

    pub fn output_node(&self) -> NodeId {
        self.nodes.iter().position(|n| n.op == Op::Output).expect("validated")
    }

    /// Whether `order` is a permutation of the node ids that respects every edge.
    pub fn is_topological(&self, order: &[NodeId]) -> bool {
        let n = self.nodes.len();
        if order.len() != n {
            return false;
        }
        let mut pos = vec![usize::MAX; n];
        for (p, &id) in order.iter().enumerate() {
            if id >= n || pos[id] != usize::MAX {
                return false;
            }
            pos[id] = p;
        }
        self.edges.iter().all(|e| pos[e.producer] < pos[e.consumer])
    }

    /// Position of every node in `topo_order`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.nodes.len()];
        for (p, &id) in self.topo_order.iter().enumerate() {
            pos[id] = p;
        }
        pos
    }

    /// Number of block/layer indices present.
    pub fn block_count(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| n.block)
            .max()
            .map_or(0, |b| b as usize + 1)
    }

    pub fn layers_in_block(&self, block: u32) -> u32 {
        self.nodes
            .iter()
            .filter(|n| n.block == Some(block))
            .filter_map(|n| n.layer)
            .max()
            .unwrap_or(0)
    }

    /// The node whose tensor is the output of layer `layer` of `block`:
    /// the one node of that layer consumed from outside it.
    pub fn layer_output(&self, block: u32, layer: u32) -> Option<NodeId> {
        let in_layer = |id: NodeId| {
            let n = &self.nodes[id];
            n.block == Some(block) && n.layer == Some(layer)
        };
        self.nodes
            .iter()
            .filter(|n| in_layer(n.id))
            .find(|n| self.consumers(n.id).any(|c| !in_layer(c)))
            .map(|n| n.id)
    }

    /// Edges entering layer `layer` of `block` from outside that layer,
    /// i.e. the connections of the layer's input concatenation.
    pub fn layer_input_edges(&self, block: u32, layer: u32) -> Vec<EdgeId> {
        let in_layer = |id: NodeId| {
            let n = &self.nodes[id];
            n.block == Some(block) && n.layer == Some(layer)
        };
        (0..self.edges.len())
            .filter(|&e| in_layer(self.edges[e].consumer) && !in_layer(self.edges[e].producer))
            .collect()
    }

    /// Layer-to-layer connections inside a block (block input counts as layer 0).
    pub fn block_connection_count(&self, block: u32) -> usize {
        (1..=self.layers_in_block(block))
            .map(|l| self.layer_input_edges(block, l).len())
            .sum()
    }

    /// Every node reachable from `id` along edges, breadth first.
    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([id]);
        let mut out = Vec::new();
        while let Some(n) = queue.pop_front() {
            for c in self.consumers(n) {
                if !seen[c] {
                    seen[c] = true;
                    out.push(c);
                    queue.push_back(c);
                }
            }
        }
        out
    }

    /// JSON export carrying the graph schema tag.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema: &'static str,
            graph: &'a ComputeGraph,
        }
        let mut s = serde_json::to_string_pretty(&Doc {
            schema: GRAPH_SCHEMA,
            graph: self,
        })
        .expect("graph serializes");
        s.push('\n');
        s
    }

    /// Loads a graph written by [`ComputeGraph::to_json`], re-validating it.
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            schema: String,
            graph: ComputeGraph,
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
        if doc.schema != GRAPH_SCHEMA {
            return Err(GraphError::Malformed(format!(
                "unsupported schema `{}`, expected `{GRAPH_SCHEMA}`",
                doc.schema
            )));
        }
        Ok(doc.graph)
    }
}

/// Appends nodes in creation order; every input must already exist, so the
/// result is acyclic by construction.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<OpNode>,
    edges: Vec<Edge>,
    block: Option<u32>,
    layer: Option<u32>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tags subsequently added nodes with a block/layer position.
    pub fn set_scope(&mut self, block: Option<u32>, layer: Option<u32>) {
        self.block = block;
        self.layer = layer;
    }

    pub fn add(&mut self, op: Op, name: impl Into<String>, inputs: &[NodeId]) -> NodeId {
        let id = self.nodes.len();
        for (slot, &producer) in inputs.iter().enumerate() {
            assert!(producer < id, "input {producer} does not exist yet");
            self.edges.push(Edge {
                producer,
                consumer: id,
                slot: slot as u32,
            });
        }
        self.nodes.push(OpNode {
            id,
            op,
            name: name.into(),
            block: self.block,
            layer: self.layer,
        });
        id
    }

    pub fn finish(self) -> Result<ComputeGraph, GraphError> {
        ComputeGraph::new(self.nodes, self.edges)
    }
}
