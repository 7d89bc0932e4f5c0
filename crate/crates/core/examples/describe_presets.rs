//! Per-block architecture table of every built-in network.

use threshnet::cli::{compile, describe};
use threshnet::config::{preset, PRESET_NAMES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in PRESET_NAMES {
        let compiled = compile(preset(name)?, 224, None)?;
        println!("{}", describe(&compiled));
    }
    Ok(())
}
