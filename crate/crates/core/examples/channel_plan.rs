//! Per-layer channel counts of the network, read from the initialized weights.
//!
//! cargo run --example channel_plan -- [c0]

use amfusion::nn::{ArchConfig, ModelParams};

fn main() -> amfusion::Result<()> {
    let c0: usize = std::env::args().nth(1).map(|s| s.parse().expect("c0")).unwrap_or(16);
    let arch = ArchConfig { base_channels: c0, ca_reduction: c0.min(16), ..ArchConfig::paper() };
    let params = ModelParams::<f32>::init(arch, 0)?;
    println!("{:<18} {:>6} {:>6}", "layer", "in", "out");
    for (layer, cin, cout) in params.conv_channels() {
        println!("{layer:<18} {cin:>6} {cout:>6}");
    }
    for block in 1..=3 {
        println!("multi-kernel block {block}: {} per branch, {} out", arch.branch_width(block), arch.block_output(block));
    }
    println!("encoder features: {}", arch.feature_channels());
    println!("decoder: {:?}", arch.decoder_channels());
    println!("{} tensors, {} trainable", params.len(), params.num_trainable());
    Ok(())
}
