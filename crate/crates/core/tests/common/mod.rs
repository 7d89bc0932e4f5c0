//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use threshnet::config::{
    validate, BlockMode, BlockSpec, ChannelLayout, ConvSpec, HarmonicOutput, NetworkSpec, PoolKind, StemSpec,
};
use threshnet::graph::ComputeGraph;
use threshnet::refexec::SplitMix64;
use threshnet::shapes::min_input_size;
use threshnet::topology::build_graph;

fn pick<T: Copy>(rng: &mut SplitMix64, items: &[T]) -> T {
    items[(rng.next_u64() % items.len() as u64) as usize]
}

fn range(rng: &mut SplitMix64, lo: u32, hi: u32) -> u32 {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as u32
}

/// A small valid spec drawn from `seed`, with a compatible input size.
pub fn random_spec(seed: u64) -> (NetworkSpec, u32) {
    let mut rng = SplitMix64::new(seed);
    let convs: Vec<ConvSpec> = (0..range(&mut rng, 1, 2))
        .map(|_| {
            let k = pick(&mut rng, &[1, 3, 7]);
            let s = pick(&mut rng, &[1, 2]);
            ConvSpec::new(range(&mut rng, 3, 12), k, s)
        })
        .collect();
    let stem = StemSpec {
        convs,
        pool_kernel: pick(&mut rng, &[2, 3]),
        pool_stride: pick(&mut rng, &[1, 2]),
        pool_kind: pick(&mut rng, &[PoolKind::Max, PoolKind::Avg]),
    };
    let n_blocks = range(&mut rng, 1, 3) as usize;
    let blocks = (0..n_blocks)
        .map(|_| BlockSpec {
            num_layers: range(&mut rng, 1, 5),
            growth_rate: range(&mut rng, 2, 6),
            mode: pick(&mut rng, &[BlockMode::Auto, BlockMode::Dense, BlockMode::Harmonic]),
            multiplier: 1.3 + rng.next_unit() * 0.6,
            use_bottleneck: pick(&mut rng, &[false, true]),
            downsample_after: pick(&mut rng, &[false, true]),
        })
        .collect();
    let channel_layout = pick(&mut rng, &[ChannelLayout::BlockInput, ChannelLayout::TransitionOutput]);
    let mut channel_list: Vec<u32> = (0..n_blocks).map(|_| range(&mut rng, 4, 16)).collect();
    if channel_layout == ChannelLayout::BlockInput {
        channel_list[0] = stem.out_channels().unwrap();
    }
    let spec = NetworkSpec {
        name: format!("random{seed}"),
        stem,
        blocks,
        channel_list,
        threshold: range(&mut rng, 1, 30),
        dense_reduction: 0.5,
        harmonic_reduction: 0.85,
        classifier_classes: range(&mut rng, 2, 10),
        channel_layout,
        harmonic_output: pick(&mut rng, &[HarmonicOutput::WithInput, HarmonicOutput::OddAndFinal]),
    };
    validate(&spec).expect("generator emits valid specs");
    let graph = build_graph(&spec).expect("valid spec builds");
    let input = min_input_size(&graph).max(8) + range(&mut rng, 0, 3);
    (spec, input)
}

/// Predecessors of layer `l`: every `j < l` with `l - j` a power of two
/// dividing `l`.
pub fn harmonic_inputs_oracle(l: usize) -> Vec<usize> {
    (0..l)
        .filter(|&j| {
            let d = l - j;
            d.is_power_of_two() && l.is_multiple_of(d)
        })
        .collect()
}

pub fn dense_inputs_oracle(l: usize) -> Vec<usize> {
    (0..l).collect()
}

/// 2-adic valuation by repeated halving.
pub fn nu2(mut l: usize) -> u32 {
    let mut v = 0;
    while l.is_multiple_of(2) {
        l /= 2;
        v += 1;
    }
    v
}

/// `floor(k * m^nu2(l))` with an exactly rounded power.
pub fn width_oracle(k: u32, m: f64, l: usize) -> u32 {
    (k as f64 * m.powi(nu2(l) as i32) + 1e-9).floor() as u32
}

/// Peak from per-tensor intervals: at every topological position, sum the
/// tensors produced at or before it whose last consumer is at or after it.
pub fn interval_peak(graph: &ComputeGraph, bytes: &[u64]) -> u64 {
    let order = graph.topo_order();
    let mut pos = vec![0usize; order.len()];
    for (i, &n) in order.iter().enumerate() {
        pos[n] = i;
    }
    let last: Vec<usize> = (0..order.len())
        .map(|n| graph.consumers(n).map(|c| pos[c]).max().unwrap_or(pos[n]))
        .collect();
    (0..order.len())
        .map(|t| {
            (0..order.len())
                .filter(|&n| pos[n] <= t && t <= last[n])
                .map(|n| bytes[n])
                .sum::<u64>()
        })
        .max()
        .unwrap_or(0)
}
