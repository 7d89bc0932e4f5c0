//! How each under-determined architectural convention moves the ThreshNet
//! totals relative to the published figures.

use threshnet::calibration::reconcile;
use threshnet::config::preset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in ["threshnet79", "threshnet95"] {
        println!("{}", reconcile(&preset(name)?)?.render());
    }
    Ok(())
}
