//! The three feature fusion rules on small hand-made feature stacks.
//!
//! cargo run --example fusion_strategies

use amfusion::fusion::{l1norm_weights, meanfilter_weights, FusionKind, FusionStrategy};
use amfusion::tensor::Tensor;

fn main() -> amfusion::Result<()> {
    // two 2-channel 4x4 stacks: the first is busy on the left, the second on the right
    let f1 = Tensor::<f64>::from_fn(&[1, 2, 4, 4], |i| if i % 4 < 2 { 1.0 + (i % 3) as f64 } else { 0.1 });
    let f2 = Tensor::<f64>::from_fn(&[1, 2, 4, 4], |i| if i % 4 >= 2 { 2.0 } else { 0.0 });

    let (w1, w2) = l1norm_weights(&f1, &f2, FusionStrategy::DEFAULT_EPSILON)?[0];
    println!("l1 weights: {w1:.4} / {w2:.4}");

    let (m1, _) = meanfilter_weights(&f1, &f2, FusionStrategy::DEFAULT_EPSILON)?;
    println!("mean-filter weight of the first stack, per pixel:");
    for row in m1.chunks(4) {
        println!("  {}", row.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>().join(" "));
    }

    for kind in FusionKind::ALL {
        let fused = FusionStrategy::new(kind).apply(&f1, &f2)?;
        let row: Vec<String> = fused.data()[..4].iter().map(|v| format!("{v:.3}")).collect();
        println!("{:>5}: first row of channel 0 = {}", kind.flag(), row.join(" "));
    }

    let zero = Tensor::zeros(f1.shape());
    let kept = FusionStrategy::new(FusionKind::L1Norm).apply(&f1, &zero)?;
    println!("l1 with an all-zero partner returns the other stack: {}", kept == f1);
    Ok(())
}
