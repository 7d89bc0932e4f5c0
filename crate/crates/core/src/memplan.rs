//! Tensor liveness, execution schedules with free events, memory traffic and
//! peak resident feature-map memory.
//!
//! Every node except `Output` produces one tensor, identified here by the
//! producing node's id. A tensor dies after the last node that reads it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostReport;
use crate::graph::{ComputeGraph, NodeId, Op};
use crate::shapes::Shapes;

/// Bytes per element; everything is 32-bit float.
pub const ELEMENT_BYTES: u64 = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("step {step}: node {node} reads tensor {value} which is not live")]
    UseAfterFree { step: usize, node: NodeId, value: NodeId },
    #[error("step {step}: tensor {value} freed twice or never allocated")]
    DoubleFree { step: usize, value: NodeId },
    #[error("tensor {0} is never freed")]
    Leak(NodeId),
    #[error("schedule order is not a topological order of the graph")]
    Order,
}

/// Last-use position (in `topo_order`) of every tensor, keyed by producer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Liveness {
    last_use: Vec<Option<usize>>,
}

impl Liveness {
    /// `None` for nodes that produce nothing.
    pub fn last_use(&self, producer: NodeId) -> Option<usize> {
        self.last_use[producer]
    }

    pub fn edge_last_use(&self, graph: &ComputeGraph, edge: usize) -> usize {
        self.last_use[graph.edges()[edge].producer].expect("edge producers yield tensors")
    }
}

/// Computes tensor lifetimes. A tensor with no consumer dies at its own step.
pub fn liveness(graph: &ComputeGraph) -> Liveness {
    liveness_with(graph, false)
}

/// With `zero_copy_concat`, a concat is a view over its inputs, so they stay
/// live until the concat's own readers are done.
pub fn liveness_with(graph: &ComputeGraph, zero_copy_concat: bool) -> Liveness {
    let pos = graph.positions();
    let mut last_use = vec![None; graph.nodes().len()];
    for &id in graph.topo_order().iter().rev() {
        if !graph.node(id).op.produces_tensor() {
            continue;
        }
        let mut last = pos[id];
        for c in graph.consumers(id) {
            last = last.max(pos[c]);
            if zero_copy_concat && graph.node(c).op == Op::Concat {
                last = last.max(last_use[c].unwrap_or(pos[c]));
            }
        }
        last_use[id] = Some(last);
    }
    Liveness { last_use }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub node: NodeId,
    /// Tensors released once this node has run.
    pub free_after: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: Vec<Step>,
}

fn schedule_from(graph: &ComputeGraph, live: &Liveness) -> Schedule {
    let mut steps: Vec<Step> = graph
        .topo_order()
        .iter()
        .map(|&node| Step {
            node,
            free_after: Vec::new(),
        })
        .collect();
    for node in graph.nodes() {
        if let Some(t) = live.last_use(node.id) {
            steps[t].free_after.push(node.id);
        }
    }
    Schedule { steps }
}

/// Topological execution order with free events from [`liveness`].
pub fn schedule(graph: &ComputeGraph) -> Schedule {
    schedule_from(graph, &liveness(graph))
}

pub fn schedule_with(graph: &ComputeGraph, zero_copy_concat: bool) -> Schedule {
    schedule_from(graph, &liveness_with(graph, zero_copy_concat))
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Replays the schedule with the given per-tensor sizes and returns the
    /// peak of simultaneously live bytes, measured after each allocation and
    /// before that step's frees. Fails on any read of a dead tensor, double
    /// free or leak.
    pub fn replay(&self, graph: &ComputeGraph, bytes: &[u64]) -> Result<u64, ScheduleError> {
        let order: Vec<NodeId> = self.steps.iter().map(|s| s.node).collect();
        if !graph.is_topological(&order) {
            return Err(ScheduleError::Order);
        }
        let n = graph.nodes().len();
        let mut live = vec![false; n];
        let mut freed = vec![false; n];
        let (mut current, mut peak) = (0u64, 0u64);
        for (step, s) in self.steps.iter().enumerate() {
            for value in graph.inputs(s.node) {
                if !live[value] {
                    return Err(ScheduleError::UseAfterFree {
                        step,
                        node: s.node,
                        value,
                    });
                }
            }
            if graph.node(s.node).op.produces_tensor() {
                live[s.node] = true;
                current += bytes[s.node];
                peak = peak.max(current);
            }
            for &value in &s.free_after {
                if !live[value] {
                    return Err(ScheduleError::DoubleFree { step, value });
                }
                live[value] = false;
                freed[value] = true;
                current -= bytes[value];
            }
        }
        if let Some(leak) = (0..n).find(|&v| graph.node(v).op.produces_tensor() && !freed[v]) {
            return Err(ScheduleError::Leak(leak));
        }
        Ok(peak)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTraffic {
    pub read_bytes: u64,
    pub write_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemReport {
    pub total_read_bytes: u64,
    pub total_write_bytes: u64,
    /// `(read + write) / 1e6`.
    pub memrw_mb: f64,
    pub peak_bytes: u64,
    pub per_node: Vec<NodeTraffic>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficOptions {
    /// Treat concatenation as a view: no copy traffic and no buffer of its own.
    pub zero_copy_concat: bool,
}

/// Bytes of every node's output tensor for one sample (0 for `Output`, and
/// for concats when they are views).
pub fn tensor_bytes(graph: &ComputeGraph, shapes: &Shapes, options: TrafficOptions) -> Vec<u64> {
    graph
        .nodes()
        .iter()
        .map(|node| match node.op {
            Op::Output => 0,
            Op::Concat if options.zero_copy_concat => 0,
            _ => ELEMENT_BYTES * shapes.output(node.id).per_sample(),
        })
        .collect()
}

/// Read/write traffic and peak memory for one sample.
///
/// Each node reads all its inputs and its weights once and writes its
/// output once. Totals accumulate in topological order.
pub fn traffic(
    graph: &ComputeGraph,
    shapes: &Shapes,
    costs: &CostReport,
    options: TrafficOptions,
) -> Result<MemReport, ScheduleError> {
    let bytes = tensor_bytes(graph, shapes, options);
    let mut per_node = vec![NodeTraffic::default(); graph.nodes().len()];
    let (mut read, mut write) = (0u64, 0u64);
    for &id in graph.topo_order() {
        let node = graph.node(id);
        let t = if options.zero_copy_concat && node.op == Op::Concat {
            NodeTraffic::default()
        } else {
            let inputs: u64 = graph
                .inputs(id)
                .map(|p| shapes.output(p).per_sample())
                .sum();
            NodeTraffic {
                read_bytes: ELEMENT_BYTES * (inputs + costs.per_node[id].params),
                write_bytes: bytes[id],
            }
        };
        read += t.read_bytes;
        write += t.write_bytes;
        per_node[id] = t;
    }
    let peak_bytes = schedule_with(graph, options.zero_copy_concat).replay(graph, &bytes)?;
    Ok(MemReport {
        total_read_bytes: read,
        total_write_bytes: write,
        memrw_mb: (read + write) as f64 / 1e6,
        peak_bytes,
        per_node,
    })
}
