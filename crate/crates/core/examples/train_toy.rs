//! Trains the desk-scale model on synthetic complementary pairs and reports
//! the loss drop.
//!
//! cargo run --release --example train_toy -- [steps] [out.amfw]

use std::time::Instant;

use amfusion::synthetic::training_pairs;
use amfusion::training::{train, TrainConfig};

fn main() -> amfusion::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(200);
    let out = args.next();

    let mut cfg = TrainConfig::toy();
    cfg.iterations = steps;
    cfg.seed = 7;
    cfg.checkpoint = out.map(Into::into);
    let pairs = training_pairs(4, cfg.arch.image_side, 100)?;

    let t0 = Instant::now();
    let run = train(&pairs, &cfg)?;
    let first = run.trace.first().unwrap();
    let last = run.trace.last().unwrap();
    for r in run.trace.iter().step_by((steps / 10).max(1)) {
        println!("iter {:4}  L_total {:.5}", r.iter, r.total);
    }
    println!(
        "{} steps in {:.1}s: L_total {:.5} -> {:.5} ({:.1}%)",
        steps,
        t0.elapsed().as_secs_f64(),
        first.total,
        last.total,
        100.0 * last.total / first.total
    );
    Ok(())
}
