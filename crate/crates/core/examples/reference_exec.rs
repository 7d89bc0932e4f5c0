//! Runs ThreshNet79 at 64x64 through the naive and the memory-scheduled
//! executors and checks they agree bit for bit.

use threshnet::config::preset;
use threshnet::memplan::schedule;
use threshnet::refexec::{checksum, exec_naive, exec_scheduled, init_weights, Tensor};
use threshnet::shapes::{propagate, TensorShape};
use threshnet::topology::build_graph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 42;
    let input = TensorShape::image(1, 64);
    let graph = build_graph(&preset("threshnet79")?)?;
    let shapes = propagate(&graph, input)?;
    let weights = init_weights(&graph, &shapes, seed);
    let x = Tensor::random(input, seed);

    let naive = exec_naive(&graph, &shapes, &weights, &x)?;
    let scheduled = exec_scheduled(&graph, &shapes, &schedule(&graph), &weights, &x)?;
    println!("output    {}", naive.shape);
    println!("naive     {}", checksum(&naive));
    println!("scheduled {}", checksum(&scheduled));
    println!("first logits {:?}", &naive.data[..5]);
    assert_eq!(checksum(&naive), checksum(&scheduled));
    Ok(())
}
