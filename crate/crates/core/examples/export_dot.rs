//! Writes a small custom network as Graphviz DOT and JSON.
//!
//! `cargo run --example export_dot -- out_dir`

use std::path::PathBuf;

use threshnet::cli::to_dot;
use threshnet::config::{parse_config, preset, serialize_config};
use threshnet::graph::ComputeGraph;
use threshnet::topology::build_graph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));

    let mut spec = preset("threshnet79")?;
    spec.name = "tiny".into();
    for block in &mut spec.blocks {
        block.num_layers = block.num_layers.min(2);
    }
    let spec = parse_config(&serialize_config(&spec))?;
    let graph = build_graph(&spec)?;

    let dot = dir.join("tiny.dot");
    std::fs::write(&dot, to_dot(&graph, &spec.name))?;
    let json = dir.join("tiny.json");
    std::fs::write(&json, graph.to_json())?;
    let reloaded = ComputeGraph::from_json(&std::fs::read_to_string(&json)?)?;
    assert_eq!(reloaded.nodes().len(), graph.nodes().len());
    println!(
        "{} nodes, {} edges -> {} and {}",
        graph.nodes().len(),
        graph.edges().len(),
        dot.display(),
        json.display()
    );
    Ok(())
}
