//! Nine quality metrics for a fused image against its two sources.
//!
//! With three image paths (infrared, visible, fused) those files are scored.
//! Without arguments a synthetic pair is fused by plain pixel averaging and
//! by per-pixel maximum, and both results are scored.
//!
//! cargo run --release --example evaluate_metrics -- [ir vis fused]

use amfusion::dataio::load_gray;
use amfusion::metrics::{evaluate, GrayImageU8, METRIC_NAMES};
use amfusion::synthetic::complementary_pair;

fn print_row(label: &str, v: &[f64; 9]) {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:>8.4}")).collect();
    println!("{label:<8} {}", cells.join(" "));
}

fn pixelwise(a: &GrayImageU8, b: &GrayImageU8, f: impl Fn(u8, u8) -> u8) -> GrayImageU8 {
    let px = a.pixels().iter().zip(b.pixels()).map(|(&x, &y)| f(x, y)).collect();
    GrayImageU8::new(a.width(), a.height(), px).expect("same size")
}

fn main() -> amfusion::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    println!("{:<8} {}", "", METRIC_NAMES.map(|m| format!("{m:>8}")).join(" "));
    if let [ir, vis, fused] = args.as_slice() {
        let v = evaluate(&load_gray(ir)?, &load_gray(vis)?, &load_gray(fused)?)?;
        print_row("fused", &v);
        return Ok(());
    }
    let (_, a, b) = complementary_pair(64, 3, 3);
    let avg = pixelwise(&a, &b, |x, y| ((x as u16 + y as u16 + 1) / 2) as u8);
    let max = pixelwise(&a, &b, u8::max);
    print_row("average", &evaluate(&a, &b, &avg)?);
    print_row("maximum", &evaluate(&a, &b, &max)?);
    Ok(())
}
