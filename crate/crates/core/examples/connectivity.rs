//! Input sets, widths and shortcut counts of dense and harmonic blocks.

use threshnet::topology::{
    block_output_layers, harmonic_layer_width, layer_inputs, two_adic_valuation, ConnectionMode,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layers = 16;
    println!("{:>3} {:>4} {:>6}  {:<24} dense", "l", "nu2", "width", "harmonic inputs");
    for l in 1..=layers {
        let harmonic = layer_inputs(ConnectionMode::Harmonic, l)?;
        let dense = layer_inputs(ConnectionMode::Dense, l)?;
        println!(
            "{:>3} {:>4} {:>6}  {:<24} {} inputs",
            l,
            two_adic_valuation(l),
            harmonic_layer_width(40, 1.7, l),
            format!("{harmonic:?}"),
            dense.len()
        );
    }

    println!();
    println!("{:>3} {:>10} {:>10}", "L", "dense", "harmonic");
    for l in 1..=layers {
        let count = |mode| -> usize { (1..=l).map(|i| layer_inputs(mode, i).unwrap().len()).sum() };
        println!("{:>3} {:>10} {:>10}", l, count(ConnectionMode::Dense), count(ConnectionMode::Harmonic));
    }

    println!();
    println!("harmonic block output layers (L=16): {:?}", block_output_layers(ConnectionMode::Harmonic, 16));
    Ok(())
}
