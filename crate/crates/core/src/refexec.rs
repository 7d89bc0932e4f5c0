//! Deterministic reference executor.
//!
//! Weights come from per-node splitmix64 streams, every operator is a plain
//! loop with a fixed accumulation order in f32, and batch-norm runs in
//! inference mode with mean 0 and variance 1. The executor exists to check
//! structure, not to model trained inference.

use std::fmt;

use crate::error::ExecError;
use crate::graph::{ComputeGraph, NodeId, Op, PoolSpec};
use crate::memplan::Schedule;
use crate::shapes::{Shapes, TensorShape};

pub const BN_EPSILON: f32 = 1e-5;

/// Stream id used for generated inputs; node ids never reach it.
pub const INPUT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) from the top 53 bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [-scale, scale).
    pub fn next_symmetric(&mut self, scale: f64) -> f32 {
        ((2.0 * self.next_unit() - 1.0) * scale) as f32
    }
}

/// Dense row-major NCHW f32 array.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{} [{} values]", self.shape, self.data.len())
    }
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f32>) -> Self {
        assert_eq!(data.len() as u64, shape.numel(), "data length must match shape");
        Tensor { shape, data }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Tensor::new(shape, vec![0.0; shape.numel() as usize])
    }

    /// Uniform values in [-1, 1) from the input stream of `seed`.
    pub fn random(shape: TensorShape, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed ^ INPUT_STREAM);
        let data = (0..shape.numel()).map(|_| rng.next_symmetric(1.0)).collect();
        Tensor::new(shape, data)
    }

    fn idx(&self, n: u32, c: u32, h: u32, w: u32) -> usize {
        let s = self.shape;
        (((n * s.c + c) * s.h + h) * s.w + w) as usize
    }

    fn at(&self, n: u32, c: u32, h: u32, w: u32) -> f32 {
        self.data[self.idx(n, c, h, w)]
    }
}

/// FNV-1a 64 over the little-endian bytes of every element, as 16 hex digits.
pub fn checksum(t: &Tensor) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in &t.data {
        for byte in v.to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{hash:016x}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeWeights {
    /// Kernel laid out `[c_out][c_in][kh][kw]`.
    Conv { kernel: Vec<f32>, bias: Option<Vec<f32>> },
    BatchNorm { gamma: Vec<f32>, beta: Vec<f32> },
    /// Matrix laid out `[classes][c_in]`.
    FullyConnected { weight: Vec<f32>, bias: Vec<f32> },
}

impl NodeWeights {
    pub fn len(&self) -> usize {
        match self {
            NodeWeights::Conv { kernel, bias } => kernel.len() + bias.as_ref().map_or(0, Vec::len),
            NodeWeights::BatchNorm { gamma, beta } => gamma.len() + beta.len(),
            NodeWeights::FullyConnected { weight, bias } => weight.len() + bias.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    weights: Vec<Option<NodeWeights>>,
}

impl WeightStore {
    pub fn get(&self, node: NodeId) -> Option<&NodeWeights> {
        self.weights.get(node).and_then(Option::as_ref)
    }

    pub fn set(&mut self, node: NodeId, w: NodeWeights) {
        if self.weights.len() <= node {
            self.weights.resize(node + 1, None);
        }
        self.weights[node] = Some(w);
    }
}

/// Seeds every weighted node from `splitmix64(seed ^ node_id)`. Conv and FC
/// weights are uniform in `±fan_in^-1/2`, drawn in row-major order; biases
/// are 0, BN uses gamma 1 and beta 0.
pub fn init_weights(graph: &ComputeGraph, shapes: &Shapes, seed: u64) -> WeightStore {
    let mut store = WeightStore::default();
    for node in graph.nodes() {
        let c_in = graph.inputs(node.id).next().map_or(0, |p| shapes.output(p).c) as usize;
        let mut rng = SplitMix64::new(seed ^ node.id as u64);
        let w = match node.op {
            Op::Conv(conv) => {
                let k = conv.kernel as usize;
                let fan_in = c_in * k * k;
                let scale = (fan_in as f64).powf(-0.5);
                let count = conv.out_channels as usize * fan_in;
                NodeWeights::Conv {
                    kernel: (0..count).map(|_| rng.next_symmetric(scale)).collect(),
                    bias: conv.has_bias.then(|| vec![0.0; conv.out_channels as usize]),
                }
            }
            Op::BatchNorm => NodeWeights::BatchNorm {
                gamma: vec![1.0; c_in],
                beta: vec![0.0; c_in],
            },
            Op::FullyConnected { classes } => {
                let scale = (c_in as f64).powf(-0.5);
                NodeWeights::FullyConnected {
                    weight: (0..classes as usize * c_in).map(|_| rng.next_symmetric(scale)).collect(),
                    bias: vec![0.0; classes as usize],
                }
            }
            _ => continue,
        };
        store.set(node.id, w);
    }
    store
}

fn conv2d(x: &Tensor, kernel: &[f32], bias: Option<&[f32]>, out: TensorShape, k: u32, stride: u32, pad: u32, count: &mut u64) -> Tensor {
    let c_in = x.shape.c;
    let mut y = Tensor::zeros(out);
    let mut i = 0;
    for n in 0..out.n {
        for oc in 0..out.c {
            for oh in 0..out.h {
                for ow in 0..out.w {
                    let mut acc = 0.0f32;
                    for ic in 0..c_in {
                        let wbase = ((oc * c_in + ic) * k * k) as usize;
                        for kh in 0..k {
                            for kw in 0..k {
                                *count += 1;
                                let ih = (oh * stride + kh) as i64 - pad as i64;
                                let iw = (ow * stride + kw) as i64 - pad as i64;
                                if ih < 0 || iw < 0 || ih >= x.shape.h as i64 || iw >= x.shape.w as i64 {
                                    continue;
                                }
                                let v = x.at(n, ic, ih as u32, iw as u32);
                                acc += v * kernel[wbase + (kh * k + kw) as usize];
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b[oc as usize];
                    }
                    y.data[i] = acc;
                    i += 1;
                }
            }
        }
    }
    y
}

fn pool(x: &Tensor, p: PoolSpec, out: TensorShape, max: bool) -> Tensor {
    let mut y = Tensor::zeros(out);
    let mut i = 0;
    let area = (p.kernel * p.kernel) as f32;
    for n in 0..out.n {
        for c in 0..out.c {
            for oh in 0..out.h {
                for ow in 0..out.w {
                    let mut acc = if max { f32::NEG_INFINITY } else { 0.0 };
                    for kh in 0..p.kernel {
                        for kw in 0..p.kernel {
                            let ih = (oh * p.stride + kh) as i64 - p.padding as i64;
                            let iw = (ow * p.stride + kw) as i64 - p.padding as i64;
                            if ih < 0 || iw < 0 || ih >= x.shape.h as i64 || iw >= x.shape.w as i64 {
                                continue;
                            }
                            let v = x.at(n, c, ih as u32, iw as u32);
                            acc = if max { acc.max(v) } else { acc + v };
                        }
                    }
                    // Padded taps count towards the average.
                    y.data[i] = if max { acc } else { acc / area };
                    i += 1;
                }
            }
        }
    }
    y
}

/// Evaluates one node. `count` accumulates the number of inner-loop
/// multiply-adds performed.
fn eval(graph: &ComputeGraph, id: NodeId, inputs: &[&Tensor], out: TensorShape, weights: &WeightStore, count: &mut u64) -> Result<Tensor, ExecError> {
    let missing = || ExecError::MissingWeights(id);
    let x = inputs.first().copied();
    let y = match graph.node(id).op {
        Op::Input => unreachable!("input is bound by the caller"),
        Op::Output => x.expect("validated arity").clone(),
        Op::Conv(conv) => {
            let Some(NodeWeights::Conv { kernel, bias }) = weights.get(id) else {
                return Err(missing());
            };
            conv2d(x.unwrap(), kernel, bias.as_deref(), out, conv.kernel, conv.stride, conv.padding, count)
        }
        Op::BatchNorm => {
            let Some(NodeWeights::BatchNorm { gamma, beta }) = weights.get(id) else {
                return Err(missing());
            };
            let x = x.unwrap();
            let (mean, var) = (0.0f32, 1.0f32);
            let denom = (var + BN_EPSILON).sqrt();
            let plane = (out.h * out.w) as usize;
            let data = x
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    *count += 1;
                    let c = (i / plane) % out.c as usize;
                    gamma[c] * ((v - mean) / denom) + beta[c]
                })
                .collect();
            Tensor::new(out, data)
        }
        Op::Relu => {
            let x = x.unwrap();
            Tensor::new(out, x.data.iter().map(|&v| v.max(0.0)).collect())
        }
        Op::Concat => {
            let mut data = Vec::with_capacity(out.numel() as usize);
            for n in 0..out.n as usize {
                for t in inputs {
                    let per = t.shape.per_sample() as usize;
                    data.extend_from_slice(&t.data[n * per..(n + 1) * per]);
                }
            }
            Tensor::new(out, data)
        }
        Op::AvgPool(p) => pool(x.unwrap(), p, out, false),
        Op::MaxPool(p) => pool(x.unwrap(), p, out, true),
        Op::GlobalAvgPool => {
            let x = x.unwrap();
            let plane = (x.shape.h * x.shape.w) as usize;
            let data = x
                .data
                .chunks(plane)
                .map(|ch| ch.iter().fold(0.0f32, |a, &v| a + v) / plane as f32)
                .collect();
            Tensor::new(out, data)
        }
        Op::FullyConnected { classes } => {
            let Some(NodeWeights::FullyConnected { weight, bias }) = weights.get(id) else {
                return Err(missing());
            };
            let x = x.unwrap();
            let c_in = x.shape.c as usize;
            let mut data = Vec::with_capacity(out.numel() as usize);
            for n in 0..out.n as usize {
                let row = &x.data[n * c_in..(n + 1) * c_in];
                for j in 0..classes as usize {
                    let mut acc = 0.0f32;
                    for (i, &v) in row.iter().enumerate() {
                        *count += 1;
                        acc += weight[j * c_in + i] * v;
                    }
                    data.push(acc + bias[j]);
                }
            }
            Tensor::new(out, data)
        }
    };
    Ok(y)
}

fn check_input(graph: &ComputeGraph, shapes: &Shapes, input: &Tensor) -> Result<(), ExecError> {
    let expected = shapes.output(graph.input_node());
    if input.shape != expected {
        return Err(ExecError::InputShape {
            expected: expected.to_string(),
            found: input.shape.to_string(),
        });
    }
    Ok(())
}

/// Every intermediate tensor of a keep-everything run plus per-node
/// multiply-add counts.
#[derive(Debug, Clone)]
pub struct Trace {
    pub values: Vec<Tensor>,
    pub multiplies: Vec<u64>,
    pub output: Tensor,
}

/// Runs every node in topological order and retains all intermediates.
pub fn exec_traced(graph: &ComputeGraph, shapes: &Shapes, weights: &WeightStore, input: &Tensor) -> Result<Trace, ExecError> {
    check_input(graph, shapes, input)?;
    let n = graph.nodes().len();
    let mut values: Vec<Option<Tensor>> = vec![None; n];
    let mut multiplies = vec![0u64; n];
    for &id in graph.topo_order() {
        let y = if graph.node(id).op == Op::Input {
            input.clone()
        } else {
            let ins: Vec<&Tensor> = graph
                .inputs(id)
                .map(|p| values[p].as_ref().expect("topological order"))
                .collect();
            eval(graph, id, &ins, shapes.output(id), weights, &mut multiplies[id])?
        };
        values[id] = Some(y);
    }
    let output = values[graph.output_node()].clone().expect("output evaluated");
    Ok(Trace {
        values: values.into_iter().map(|v| v.expect("all evaluated")).collect(),
        multiplies,
        output,
    })
}

pub fn exec_naive(graph: &ComputeGraph, shapes: &Shapes, weights: &WeightStore, input: &Tensor) -> Result<Tensor, ExecError> {
    exec_traced(graph, shapes, weights, input).map(|t| t.output)
}

/// Same arithmetic as [`exec_naive`], but releases every tensor at the
/// schedule's free events. Reading a released tensor is a hard error.
pub fn exec_scheduled(
    graph: &ComputeGraph,
    shapes: &Shapes,
    schedule: &Schedule,
    weights: &WeightStore,
    input: &Tensor,
) -> Result<Tensor, ExecError> {
    check_input(graph, shapes, input)?;
    let n = graph.nodes().len();
    let mut values: Vec<Option<Tensor>> = vec![None; n];
    let mut freed = vec![false; n];
    let mut output = None;
    let mut count = 0u64;
    for step in &schedule.steps {
        let id = step.node;
        let y = if graph.node(id).op == Op::Input {
            input.clone()
        } else {
            let mut ins = Vec::new();
            for p in graph.inputs(id) {
                match &values[p] {
                    Some(t) => ins.push(t),
                    None if freed[p] => return Err(ExecError::UseAfterFree { node: id, value: p }),
                    None => return Err(ExecError::Missing { node: id, value: p }),
                }
            }
            eval(graph, id, &ins, shapes.output(id), weights, &mut count)?
        };
        if graph.node(id).op == Op::Output {
            output = Some(y);
        } else {
            values[id] = Some(y);
        }
        for &v in &step.free_after {
            values[v] = None;
            freed[v] = true;
        }
    }
    let out = graph.output_node();
    output.ok_or(ExecError::Missing { node: out, value: out })
}
