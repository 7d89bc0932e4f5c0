//! Sweeps the channel threshold on an all-`auto` ThreshNet79 and shows how
//! the mode split trades parameters and traffic.

use threshnet::config::{preset, BlockMode};
use threshnet::cost::cost_with_shapes;
use threshnet::memplan::{traffic, TrafficOptions};
use threshnet::shapes::{propagate, TensorShape};
use threshnet::topology::{build_graph, resolve_modes, ConnectionMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = preset("threshnet79")?;
    for block in &mut spec.blocks {
        block.mode = BlockMode::Auto;
    }
    println!("{:>9}  {:<6} {:>10} {:>9} {:>11}", "threshold", "modes", "Params(M)", "FLOPs(G)", "MemR+W(MB)");
    for threshold in [1, 150, 200, 300, 320, 500, 1000] {
        spec.threshold = threshold;
        let modes: String = resolve_modes(&spec)
            .iter()
            .map(|m| if *m == ConnectionMode::Dense { 'D' } else { 'H' })
            .collect();
        let graph = build_graph(&spec)?;
        let shapes = propagate(&graph, TensorShape::image(1, 224))?;
        let cost = cost_with_shapes(&graph, &shapes);
        let mem = traffic(&graph, &shapes, &cost, TrafficOptions::default())?;
        println!(
            "{:>9}  {:<6} {:>10.2} {:>9.2} {:>11.2}",
            threshold,
            modes,
            cost.params_millions(),
            cost.flops_giga(),
            mem.memrw_mb
        );
    }
    Ok(())
}
