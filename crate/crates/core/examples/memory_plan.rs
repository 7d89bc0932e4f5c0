//! Liveness schedule of a single harmonic block versus a dense block of the
//! same widths, and the resulting peak memory.

use threshnet::config::HarmonicOutput;
use threshnet::memplan::{schedule, tensor_bytes, TrafficOptions};
use threshnet::shapes::{propagate, TensorShape};
use threshnet::topology::{build_block_graph, harmonic_layer_width, BlockShape, ConnectionMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layers = 8;
    let widths: Vec<u32> = (1..=layers).map(|l| harmonic_layer_width(40, 1.7, l)).collect();
    for mode in [ConnectionMode::Harmonic, ConnectionMode::Dense] {
        let shape = BlockShape {
            mode,
            widths: widths.clone(),
            bottleneck: None,
            harmonic_output: HarmonicOutput::WithInput,
        };
        let graph = build_block_graph(64, &shape)?;
        let shapes = propagate(&graph, TensorShape::image(1, 14))?;
        let bytes = tensor_bytes(&graph, &shapes, TrafficOptions::default());
        let plan = schedule(&graph);
        println!("{mode:?} block, L={layers}");
        for step in &plan.steps {
            let node = graph.node(step.node);
            let freed: Vec<&str> = step.free_after.iter().map(|&v| graph.node(v).name.as_str()).collect();
            println!("  {:<16} {:>8} B  free {:?}", node.name, bytes[node.id], freed);
        }
        println!("  peak {} bytes\n", plan.replay(&graph, &bytes)?);
    }
    Ok(())
}
