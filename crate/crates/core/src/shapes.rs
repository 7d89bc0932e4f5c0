//! Static shape propagation over a [`ComputeGraph`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ShapeError;
use crate::graph::{ComputeGraph, EdgeId, NodeId, Op};

/// NCHW shape of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub n: u32,
    pub c: u32,
    pub h: u32,
    pub w: u32,
}

impl TensorShape {
    pub const fn new(n: u32, c: u32, h: u32, w: u32) -> Self {
        TensorShape { n, c, h, w }
    }

    /// Square RGB image batch.
    pub const fn image(n: u32, size: u32) -> Self {
        TensorShape::new(n, 3, size, size)
    }

    pub fn numel(&self) -> u64 {
        self.n as u64 * self.per_sample()
    }

    /// Elements of one sample, `c * h * w`.
    pub fn per_sample(&self) -> u64 {
        self.c as u64 * self.h as u64 * self.w as u64
    }

    pub fn spatial(&self) -> (u32, u32) {
        (self.h, self.w)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Output size of a sliding window: `floor((size + 2p - k) / s) + 1`.
pub fn conv_out_dim(size: u32, kernel: u32, stride: u32, padding: u32) -> Result<u32, ShapeError> {
    let underflow = || ShapeError::Underflow {
        node: None,
        size,
        kernel,
        stride,
        padding,
    };
    if size == 0 || stride == 0 || kernel == 0 {
        return Err(underflow());
    }
    let padded = size + 2 * padding;
    if padded < kernel {
        return Err(underflow());
    }
    Ok((padded - kernel) / stride + 1)
}

/// Product of all strides along the stem-to-classifier path: the smallest
/// square input every downsampling stage can halve.
pub fn min_input_size(graph: &ComputeGraph) -> u32 {
    graph
        .nodes()
        .iter()
        .filter_map(|n| match n.op {
            Op::Conv(c) => Some(c.stride),
            Op::AvgPool(p) | Op::MaxPool(p) => Some(p.stride),
            _ => None,
        })
        .product()
}

/// Rejects square inputs smaller than [`min_input_size`].
pub fn check_input_size(graph: &ComputeGraph, size: u32) -> Result<(), ShapeError> {
    let min = min_input_size(graph);
    if size < min {
        return Err(ShapeError::TooSmall { size, min });
    }
    Ok(())
}

/// Output shape of every node. The `Output` node passes its input through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shapes {
    outputs: Vec<TensorShape>,
}

impl Shapes {
    pub fn output(&self, node: NodeId) -> TensorShape {
        self.outputs[node]
    }

    /// Shape carried by an edge, i.e. its producer's output.
    pub fn edge(&self, graph: &ComputeGraph, edge: EdgeId) -> TensorShape {
        self.outputs[graph.edges()[edge].producer]
    }

    pub fn edge_shapes(&self, graph: &ComputeGraph) -> Vec<TensorShape> {
        graph.edges().iter().map(|e| self.outputs[e.producer]).collect()
    }

    pub fn inputs(&self, graph: &ComputeGraph, node: NodeId) -> Vec<TensorShape> {
        graph.inputs(node).map(|p| self.outputs[p]).collect()
    }

    /// Input shape of each block (the tensor entering its first layer).
    pub fn block_inputs(&self, graph: &ComputeGraph) -> Vec<TensorShape> {
        (0..graph.block_count() as u32)
            .filter_map(|b| graph.layer_input_edges(b, 1).first().map(|&e| self.edge(graph, e)))
            .collect()
    }
}

fn window(node: NodeId, input: TensorShape, kernel: u32, stride: u32, padding: u32, c: u32) -> Result<TensorShape, ShapeError> {
    let dim = |size| {
        conv_out_dim(size, kernel, stride, padding).map_err(|e| match e {
            ShapeError::Underflow { size, kernel, stride, padding, .. } => ShapeError::Underflow {
                node: Some(node),
                size,
                kernel,
                stride,
                padding,
            },
            other => other,
        })
    };
    Ok(TensorShape::new(input.n, c, dim(input.h)?, dim(input.w)?))
}

/// Annotates every node (and hence every edge) with its tensor shape.
pub fn propagate(graph: &ComputeGraph, input: TensorShape) -> Result<Shapes, ShapeError> {
    if input.c != 3 {
        return Err(ShapeError::InputChannels(input.c));
    }
    let mut outputs = vec![input; graph.nodes().len()];
    for &id in graph.topo_order() {
        let node = graph.node(id);
        let ins: Vec<TensorShape> = graph.inputs(id).map(|p| outputs[p]).collect();
        let first = ins.first().copied();
        let single = || {
            first.ok_or(ShapeError::Arity {
                node: id,
                expected: 1,
                found: 0,
            })
        };
        outputs[id] = match &node.op {
            Op::Input => input,
            Op::Output | Op::BatchNorm | Op::Relu => single()?,
            Op::Conv(c) => window(id, single()?, c.kernel, c.stride, c.padding, c.out_channels)?,
            Op::AvgPool(p) | Op::MaxPool(p) => {
                let x = single()?;
                window(id, x, p.kernel, p.stride, p.padding, x.c)?
            }
            Op::GlobalAvgPool => {
                let x = single()?;
                TensorShape::new(x.n, x.c, 1, 1)
            }
            Op::FullyConnected { classes } => {
                let x = single()?;
                TensorShape::new(x.n, *classes, 1, 1)
            }
            Op::Concat => {
                let x = single()?;
                let edges = graph.input_edges(id);
                for (i, s) in ins.iter().enumerate().skip(1) {
                    if s.spatial() != x.spatial() || s.n != x.n {
                        return Err(ShapeError::ConcatMismatch {
                            node: id,
                            first: edges[0],
                            second: edges[i],
                            first_hw: x.spatial(),
                            second_hw: s.spatial(),
                        });
                    }
                }
                TensorShape::new(x.n, ins.iter().map(|s| s.c).sum(), x.h, x.w)
            }
        };
    }
    Ok(Shapes { outputs })
}
