//! Finite-difference check of every op, block and loss over a few seeds.
//!
//! `cargo run --release --example gradcheck [first_seed]`

use amfusion::gradsuite::run_suite;

fn main() -> amfusion::Result<()> {
    let first: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let seeds: Vec<u64> = (first..first + 5).collect();
    let report = run_suite(&seeds)?;
    let mut worst: f64 = 0.0;
    for r in &report {
        println!("{:<24} {:>10.3e}  ({} elements)", r.op, r.worst, r.checked);
        worst = worst.max(r.worst);
    }
    println!("worst overall {worst:.3e} over seeds {seeds:?}");
    Ok(())
}
