//! Connectivity rules and lowering of a [`NetworkSpec`] into a [`ComputeGraph`].
//!
//! Inside a block, layer 0 is the block input and layers `1..=L` are the
//! composite layers. Dense layers use pre-activation (BN, ReLU, conv);
//! harmonic layers and transitions use conv, BN, ReLU.

use serde::{Deserialize, Serialize};

use crate::config::{validate, BlockMode, BlockSpec, ChannelLayout, ConvSpec, HarmonicOutput, NetworkSpec};
use crate::error::GraphError;
use crate::graph::{ComputeGraph, GraphBuilder, NodeId, Op, PoolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionMode {
    Dense,
    Harmonic,
}

/// Input width of every block under the spec's channel layout.
pub fn block_input_channels(spec: &NetworkSpec) -> Vec<u32> {
    match spec.channel_layout {
        ChannelLayout::BlockInput => spec.channel_list.clone(),
        ChannelLayout::TransitionOutput => {
            let stem = spec.stem.out_channels().unwrap_or(0);
            std::iter::once(stem)
                .chain(spec.channel_list.iter().copied())
                .take(spec.blocks.len())
                .collect()
        }
    }
}

/// The threshold mechanism: pinned modes are kept, `Auto` blocks become
/// harmonic once their input width reaches the threshold.
pub fn resolve_modes(spec: &NetworkSpec) -> Vec<ConnectionMode> {
    spec.blocks
        .iter()
        .zip(block_input_channels(spec))
        .map(|(block, width)| resolve_mode(block.mode, width, spec.threshold))
        .collect()
}

pub fn resolve_mode(mode: BlockMode, input_channels: u32, threshold: u32) -> ConnectionMode {
    match mode {
        BlockMode::Dense => ConnectionMode::Dense,
        BlockMode::Harmonic => ConnectionMode::Harmonic,
        BlockMode::Auto if input_channels >= threshold => ConnectionMode::Harmonic,
        BlockMode::Auto => ConnectionMode::Dense,
    }
}

/// Layers concatenated into the input of dense layer `l`: all of `0..l`.
pub fn dense_layer_inputs(l: usize) -> Result<Vec<usize>, GraphError> {
    if l < 1 {
        return Err(GraphError::LayerIndex(l));
    }
    Ok((0..l).collect())
}

/// Largest `n` with `2^n` dividing `l`. `l` must be non-zero.
pub fn two_adic_valuation(l: usize) -> u32 {
    debug_assert!(l > 0);
    l.trailing_zeros()
}

/// Layers feeding harmonic layer `l`: every `l - 2^n` with `2^n | l`,
/// in ascending order. Odd layers only see `l - 1`.
pub fn harmonic_layer_inputs(l: usize) -> Result<Vec<usize>, GraphError> {
    if l < 1 {
        return Err(GraphError::LayerIndex(l));
    }
    let mut inputs: Vec<usize> = (0..=two_adic_valuation(l))
        .map(|n| l - (1usize << n))
        .collect();
    inputs.reverse();
    Ok(inputs)
}

pub fn layer_inputs(mode: ConnectionMode, l: usize) -> Result<Vec<usize>, GraphError> {
    match mode {
        ConnectionMode::Dense => dense_layer_inputs(l),
        ConnectionMode::Harmonic => harmonic_layer_inputs(l),
    }
}

/// Output width of harmonic layer `l`: `floor(k * m^n)` with `n = v2(l)`.
pub fn harmonic_layer_width(growth_rate: u32, multiplier: f64, l: usize) -> u32 {
    let n = two_adic_valuation(l);
    let mut width = growth_rate as f64;
    for _ in 0..n {
        width *= multiplier;
    }
    // Products that are integers in decimal may land just below them in binary.
    (width + 1e-9).floor() as u32
}

/// Layers concatenated into a block's output, ascending.
pub fn block_output_layers(mode: ConnectionMode, num_layers: usize) -> Vec<usize> {
    block_output_layers_with(mode, num_layers, HarmonicOutput::WithInput)
}

pub fn block_output_layers_with(
    mode: ConnectionMode,
    num_layers: usize,
    harmonic: HarmonicOutput,
) -> Vec<usize> {
    match mode {
        ConnectionMode::Dense => (0..=num_layers).collect(),
        ConnectionMode::Harmonic => {
            let mut out: Vec<usize> = (1..=num_layers).filter(|l| l % 2 == 1).collect();
            if harmonic == HarmonicOutput::WithInput {
                out.insert(0, 0);
            }
            if out.last() != Some(&num_layers) {
                out.push(num_layers);
            }
            out
        }
    }
}

/// Output width of every layer `1..=L` of a block, index 0 unused.
pub fn layer_widths(block: &BlockSpec, mode: ConnectionMode) -> Vec<u32> {
    let l_max = block.num_layers as usize;
    std::iter::once(0)
        .chain((1..=l_max).map(|l| match mode {
            ConnectionMode::Dense => block.growth_rate,
            ConnectionMode::Harmonic => harmonic_layer_width(block.growth_rate, block.multiplier, l),
        }))
        .collect()
}

/// Structure of one block when lowered in isolation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockShape {
    pub mode: ConnectionMode,
    /// Output width of layers `1..=L`.
    pub widths: Vec<u32>,
    /// Dense only.
    pub bottleneck: Option<u32>,
    pub harmonic_output: HarmonicOutput,
}

/// Emits one block after `input`; returns the block output node.
fn emit_block(b: &mut GraphBuilder, index: u32, input: NodeId, shape: &BlockShape) -> NodeId {
    let mut outputs = vec![input];
    for l in 1..=shape.widths.len() {
        b.set_scope(Some(index), Some(l as u32));
        let tag = format!("b{}.l{l}", index + 1);
        let sources: Vec<NodeId> = layer_inputs(shape.mode, l)
            .expect("l >= 1")
            .into_iter()
            .map(|j| outputs[j])
            .collect();
        let entry = if sources.len() == 1 {
            sources[0]
        } else {
            b.add(Op::Concat, format!("{tag}.concat"), &sources)
        };
        let width = shape.widths[l - 1];
        let out = match shape.mode {
            ConnectionMode::Dense => {
                let mut x = b.add(Op::BatchNorm, format!("{tag}.bn"), &[entry]);
                x = b.add(Op::Relu, format!("{tag}.relu"), &[x]);
                if let Some(mid) = shape.bottleneck {
                    x = b.add(Op::Conv(ConvSpec::new(mid, 1, 1)), format!("{tag}.conv1x1"), &[x]);
                    x = b.add(Op::BatchNorm, format!("{tag}.bn2"), &[x]);
                    x = b.add(Op::Relu, format!("{tag}.relu2"), &[x]);
                }
                b.add(Op::Conv(ConvSpec::new(width, 3, 1)), format!("{tag}.conv3x3"), &[x])
            }
            ConnectionMode::Harmonic => {
                let x = b.add(Op::Conv(ConvSpec::new(width, 3, 1)), format!("{tag}.conv3x3"), &[entry]);
                let x = b.add(Op::BatchNorm, format!("{tag}.bn"), &[x]);
                b.add(Op::Relu, format!("{tag}.relu"), &[x])
            }
        };
        outputs.push(out);
    }
    b.set_scope(Some(index), None);
    let kept: Vec<NodeId> = block_output_layers_with(shape.mode, shape.widths.len(), shape.harmonic_output)
        .into_iter()
        .map(|j| outputs[j])
        .collect();
    let out = if kept.len() == 1 {
        kept[0]
    } else {
        b.add(Op::Concat, format!("b{}.out", index + 1), &kept)
    };
    b.set_scope(None, None);
    out
}

fn emit_conv_bn_relu(b: &mut GraphBuilder, conv: ConvSpec, name: &str, input: NodeId) -> NodeId {
    let x = b.add(Op::Conv(conv), format!("{name}.conv"), &[input]);
    let x = b.add(Op::BatchNorm, format!("{name}.bn"), &[x]);
    b.add(Op::Relu, format!("{name}.relu"), &[x])
}

fn emit_transition(b: &mut GraphBuilder, index: usize, channels: u32, pool: bool, input: NodeId) -> NodeId {
    let name = format!("t{}", index + 1);
    let x = emit_conv_bn_relu(b, ConvSpec::new(channels, 1, 1), &name, input);
    if pool {
        let spec = PoolSpec {
            kernel: 2,
            stride: 2,
            padding: 0,
        };
        b.add(Op::AvgPool(spec), format!("{name}.pool"), &[x])
    } else {
        x
    }
}

/// Lowers a validated description into its full computation graph.
pub fn build_graph(spec: &NetworkSpec) -> Result<ComputeGraph, GraphError> {
    validate(spec).map_err(GraphError::Invalid)?;
    let modes = resolve_modes(spec);
    let mut b = GraphBuilder::new();

    let mut x = b.add(Op::Input, "input", &[]);
    for (i, conv) in spec.stem.convs.iter().enumerate() {
        x = emit_conv_bn_relu(&mut b, *conv, &format!("stem{}", i + 1), x);
    }
    let pool = PoolSpec {
        kernel: spec.stem.pool_kernel,
        stride: spec.stem.pool_stride,
        padding: spec.stem.pool_padding(),
    };
    x = b.add(Op::pool(spec.stem.pool_kind, pool), "stem.pool", &[x]);

    let last = spec.blocks.len() - 1;
    for (i, (block, &mode)) in spec.blocks.iter().zip(&modes).enumerate() {
        let shape = BlockShape {
            mode,
            widths: layer_widths(block, mode)[1..].to_vec(),
            bottleneck: (mode == ConnectionMode::Dense && block.use_bottleneck).then(|| 4 * block.growth_rate),
            harmonic_output: spec.harmonic_output,
        };
        x = emit_block(&mut b, i as u32, x, &shape);
        let transition_width = match spec.channel_layout {
            ChannelLayout::BlockInput if i < last => Some(spec.channel_list[i + 1]),
            ChannelLayout::BlockInput => None,
            ChannelLayout::TransitionOutput => Some(spec.channel_list[i]),
        };
        if let Some(width) = transition_width {
            x = emit_transition(&mut b, i, width, block.downsample_after, x);
        }
    }

    x = b.add(Op::GlobalAvgPool, "classifier.pool", &[x]);
    x = b.add(
        Op::FullyConnected {
            classes: spec.classifier_classes,
        },
        "classifier.fc",
        &[x],
    );
    b.add(Op::Output, "output", &[x]);
    b.finish()
}

/// A single block fed by a 1x1 conv that lifts the 3-channel input to
/// `input_channels`, followed directly by the output node.
pub fn build_block_graph(input_channels: u32, shape: &BlockShape) -> Result<ComputeGraph, GraphError> {
    if shape.widths.is_empty() || input_channels == 0 {
        return Err(GraphError::Malformed("block needs a layer and a positive input width".into()));
    }
    let mut b = GraphBuilder::new();
    let x = b.add(Op::Input, "input", &[]);
    let x = b.add(Op::Conv(ConvSpec::new(input_channels, 1, 1)), "lift", &[x]);
    let x = emit_block(&mut b, 0, x, shape);
    b.add(Op::Output, "output", &[x]);
    b.finish()
}
