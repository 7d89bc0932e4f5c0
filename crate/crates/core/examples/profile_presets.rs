//! Parameter, multiply-accumulate and memory-traffic profile of every
//! built-in network at 224x224.

use threshnet::config::{preset, PRESET_NAMES};
use threshnet::cost::cost_with_shapes;
use threshnet::memplan::{traffic, TrafficOptions};
use threshnet::shapes::{propagate, TensorShape};
use threshnet::topology::build_graph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!(
        "{:<12} {:>6} {:>10} {:>9} {:>9} {:>11} {:>11} {:>10}",
        "network", "depth", "Params(M)", "MACs(G)", "FLOPs(G)", "MemR+W(MB)", "zero-copy", "peak(MB)"
    );
    for name in PRESET_NAMES {
        let graph = build_graph(&preset(name)?)?;
        let shapes = propagate(&graph, TensorShape::image(1, 224))?;
        let cost = cost_with_shapes(&graph, &shapes);
        let mem = traffic(&graph, &shapes, &cost, TrafficOptions::default())?;
        let view = traffic(&graph, &shapes, &cost, TrafficOptions { zero_copy_concat: true })?;
        println!(
            "{:<12} {:>6} {:>10.2} {:>9.2} {:>9.2} {:>11.2} {:>11.2} {:>10.2}",
            name,
            cost.depth,
            cost.params_millions(),
            cost.macs_giga(),
            cost.flops_giga(),
            mem.memrw_mb,
            view.memrw_mb,
            mem.peak_bytes as f64 / 1e6
        );
    }
    Ok(())
}
