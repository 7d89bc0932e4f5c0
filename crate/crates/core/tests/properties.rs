mod common;

use proptest::prelude::*;
use threshnet::config::{parse_config, preset, serialize_config, BlockMode};
use threshnet::cost::{cost_with_shapes, network_cost};
use threshnet::graph::{ComputeGraph, Op};
use threshnet::memplan::{schedule_with, tensor_bytes, traffic, TrafficOptions};
use threshnet::shapes::{propagate, TensorShape};
use threshnet::topology::{
    build_block_graph, build_graph, harmonic_layer_inputs, harmonic_layer_width, layer_inputs, BlockShape,
    ConnectionMode,
};

use common::{interval_peak, random_spec};

fn concat_channels(graph: &ComputeGraph, shapes: &threshnet::shapes::Shapes, name: &str) -> Option<u32> {
    graph.nodes().iter().find(|n| n.name == name).map(|n| shapes.output(n.id).c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip(seed in any::<u64>()) {
        let (spec, _) = random_spec(seed);
        let text = serialize_config(&spec);
        prop_assert_eq!(parse_config(&text).unwrap(), spec);
    }

    #[test]
    fn built_graphs_are_acyclic_with_ascending_concat_slots(seed in any::<u64>()) {
        let (spec, _) = random_spec(seed);
        let g = build_graph(&spec).unwrap();
        prop_assert!(g.is_topological(g.topo_order()));
        let pos = g.positions();
        for node in g.nodes().iter().filter(|n| n.op == Op::Concat) {
            let producers: Vec<usize> = g.inputs(node.id).collect();
            prop_assert!(producers.windows(2).all(|w| pos[w[0]] < pos[w[1]]));
        }
    }

    #[test]
    fn costs_are_additive_and_batch_free(seed in any::<u64>()) {
        let (spec, input) = random_spec(seed);
        let g = build_graph(&spec).unwrap();
        let shapes = propagate(&g, TensorShape::image(1, input)).unwrap();
        let c = cost_with_shapes(&g, &shapes);
        prop_assert_eq!(c.total_params, c.per_node.iter().map(|n| n.params).sum::<u64>());
        prop_assert_eq!(c.total_macc, c.sum_over(0..g.nodes().len()).macc);
        prop_assert_eq!(c.reported_macs, 2 * c.reported_flops);
        let batched = network_cost(&g, TensorShape::image(3, input)).unwrap();
        prop_assert_eq!(batched, c);
    }

    #[test]
    fn classifier_scaling(seed in any::<u64>(), extra in 1u32..50) {
        let (mut spec, input) = random_spec(seed);
        let g = build_graph(&spec).unwrap();
        let shapes = propagate(&g, TensorShape::image(1, input)).unwrap();
        let before = cost_with_shapes(&g, &shapes);
        let fc = g.nodes().iter().find(|n| matches!(n.op, Op::FullyConnected { .. })).unwrap();
        let c_in = shapes.inputs(&g, fc.id)[0].c as u64;
        spec.classifier_classes += extra;
        let after = network_cost(&build_graph(&spec).unwrap(), TensorShape::image(1, input)).unwrap();
        prop_assert_eq!(after.total_params - before.total_params, (c_in + 1) * extra as u64);
        prop_assert_eq!(after.total_macc - before.total_macc, c_in * extra as u64);
    }

    #[test]
    fn schedules_replay_safely(seed in any::<u64>()) {
        let (spec, input) = random_spec(seed);
        let g = build_graph(&spec).unwrap();
        let shapes = propagate(&g, TensorShape::image(1, input)).unwrap();
        let costs = cost_with_shapes(&g, &shapes);
        for zero_copy_concat in [false, true] {
            let opts = TrafficOptions { zero_copy_concat };
            let bytes = tensor_bytes(&g, &shapes, opts);
            let peak = schedule_with(&g, zero_copy_concat).replay(&g, &bytes).unwrap();
            prop_assert!(peak <= bytes.iter().sum::<u64>());
            if !zero_copy_concat {
                prop_assert_eq!(peak, interval_peak(&g, &bytes));
            }
            traffic(&g, &shapes, &costs, opts).unwrap();
        }
        let copy = traffic(&g, &shapes, &costs, TrafficOptions::default()).unwrap();
        let view = traffic(&g, &shapes, &costs, TrafficOptions { zero_copy_concat: true }).unwrap();
        prop_assert!(view.memrw_mb <= copy.memrw_mb);
    }

    #[test]
    fn dense_channel_bookkeeping(k0 in 1u32..64, k in 1u32..40, layers in 2usize..12) {
        let shape = BlockShape {
            mode: ConnectionMode::Dense,
            widths: vec![k; layers],
            bottleneck: Some(4 * k),
            harmonic_output: Default::default(),
        };
        let g = build_block_graph(k0, &shape).unwrap();
        let shapes = propagate(&g, TensorShape::image(1, 4)).unwrap();
        for l in 2..=layers {
            prop_assert_eq!(
                concat_channels(&g, &shapes, &format!("b1.l{l}.concat")),
                Some(k0 + k * (l as u32 - 1))
            );
        }
        prop_assert_eq!(concat_channels(&g, &shapes, "b1.out"), Some(k0 + k * layers as u32));
    }
}

// Harmonic blocks concatenate strictly fewer channels than dense blocks of
// the same widths once L >= 4.
#[test]
fn harmonic_concat_volume_below_dense() {
    for k in [32u32, 40, 160] {
        for layers in 4..=16usize {
            let widths: Vec<u32> = (1..=layers).map(|l| harmonic_layer_width(k, 1.7, l)).collect();
            let volume = |mode| {
                (1..=layers)
                    .map(|l| {
                        layer_inputs(mode, l)
                            .unwrap()
                            .iter()
                            .map(|&j| if j == 0 { 64 } else { widths[j - 1] })
                            .sum::<u32>()
                    })
                    .sum::<u32>()
            };
            assert!(volume(ConnectionMode::Harmonic) < volume(ConnectionMode::Dense), "k={k} L={layers}");
        }
    }
}

#[test]
fn harmonic_inputs_match_oracle_far_out() {
    for l in 1..=1024 {
        assert_eq!(harmonic_layer_inputs(l).unwrap(), common::harmonic_inputs_oracle(l), "l={l}");
    }
}

#[test]
fn auto_blocks_follow_threshold() {
    let mut spec = preset("threshnet79").unwrap();
    for b in &mut spec.blocks {
        b.mode = BlockMode::Auto;
    }
    let g = build_graph(&spec).unwrap();
    // Blocks 1..3 start below 320 channels, blocks 4..5 at or above it.
    let shapes = propagate(&g, TensorShape::image(1, 64)).unwrap();
    for (i, s) in shapes.block_inputs(&g).iter().enumerate() {
        let harmonic = g.nodes().iter().any(|n| n.name == format!("b{}.l2.concat", i + 1))
            && g.block_connection_count(i as u32) < {
                let l = spec.blocks[i].num_layers as usize;
                l * (l + 1) / 2
            };
        assert_eq!(harmonic, s.c >= 320, "block {i}");
    }
}
