//! Parameter and multiply-accumulate counting.
//!
//! Counts are per sample. Convs count every kernel tap, padded or not.
//! BatchNorm is one multiply-add per element and carries a scale and a shift
//! per channel. Pools, ReLU and Concat are free.
//!
//! Reported units follow the comparison table this tool mirrors: its
//! "FLOPs" column is the multiply-accumulate count and its "MACs" column is
//! twice that.

use serde::{Deserialize, Serialize};

use crate::graph::{ComputeGraph, NodeId, Op, OpNode};
use crate::shapes::{propagate, Shapes, TensorShape};
use crate::error::ShapeError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCost {
    pub params: u64,
    pub macc: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_node: Vec<NodeCost>,
    pub total_params: u64,
    pub total_macc: u64,
    pub reported_flops: u64,
    pub reported_macs: u64,
    pub depth: u32,
}

/// Learnable parameters of one node given its input shapes.
pub fn op_params(node: &OpNode, inputs: &[TensorShape]) -> u64 {
    let c_in = inputs.first().map_or(0, |s| s.c as u64);
    match node.op {
        Op::Conv(conv) => {
            let k = conv.kernel as u64;
            let out = conv.out_channels as u64;
            c_in * out * k * k + if conv.has_bias { out } else { 0 }
        }
        Op::BatchNorm => 2 * c_in,
        Op::FullyConnected { classes } => c_in * classes as u64 + classes as u64,
        _ => 0,
    }
}

/// Multiply-accumulates of one node for a single sample.
pub fn op_macc(node: &OpNode, inputs: &[TensorShape], output: TensorShape) -> u64 {
    let c_in = inputs.first().map_or(0, |s| s.c as u64);
    match node.op {
        Op::Conv(conv) => {
            let k = conv.kernel as u64;
            c_in * conv.out_channels as u64 * k * k * output.h as u64 * output.w as u64
        }
        Op::FullyConnected { classes } => c_in * classes as u64,
        Op::BatchNorm => output.per_sample(),
        _ => 0,
    }
}

/// Number of conv and fully-connected layers.
pub fn depth(graph: &ComputeGraph) -> u32 {
    graph.nodes().iter().filter(|n| n.op.is_weighted_layer()).count() as u32
}

/// Costs of an already shaped graph.
pub fn cost_with_shapes(graph: &ComputeGraph, shapes: &Shapes) -> CostReport {
    let per_node: Vec<NodeCost> = graph
        .nodes()
        .iter()
        .map(|node| {
            let ins = shapes.inputs(graph, node.id);
            NodeCost {
                params: op_params(node, &ins),
                macc: op_macc(node, &ins, shapes.output(node.id)),
            }
        })
        .collect();
    let total_params = per_node.iter().map(|c| c.params).sum();
    let total_macc = per_node.iter().map(|c| c.macc).sum();
    CostReport {
        per_node,
        total_params,
        total_macc,
        reported_flops: total_macc,
        reported_macs: 2 * total_macc,
        depth: depth(graph),
    }
}

pub fn network_cost(graph: &ComputeGraph, input: TensorShape) -> Result<CostReport, ShapeError> {
    let shapes = propagate(graph, input)?;
    Ok(cost_with_shapes(graph, &shapes))
}

impl CostReport {
    /// Sum over an arbitrary subset of nodes.
    pub fn sum_over(&self, nodes: impl IntoIterator<Item = NodeId>) -> NodeCost {
        nodes.into_iter().fold(NodeCost::default(), |acc, id| NodeCost {
            params: acc.params + self.per_node[id].params,
            macc: acc.macc + self.per_node[id].macc,
        })
    }

    pub fn params_millions(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn flops_giga(&self) -> f64 {
        self.reported_flops as f64 / 1e9
    }

    pub fn macs_giga(&self) -> f64 {
        self.reported_macs as f64 / 1e9
    }
}
