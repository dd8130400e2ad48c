//! Fuses a registered infrared/visible pair with every strategy.
//!
//! cargo run --release --example fuse_pair -- model.amfw [ir vis] [out_dir]
//!
//! Without image paths a synthetic pair is used, each source sharp on one
//! half only. Outputs go to `out_dir` (default: the system temp dir) as PGM.

use std::path::PathBuf;

use amfusion::dataio::{load_gray, save_gray, save_image, to_tensor};
use amfusion::fusion::{FusionKind, FusionStrategy};
use amfusion::metrics::{en, sf, GrayImageU8};
use amfusion::nn::{fuse_forward, load_weights, ArchConfig};
use amfusion::synthetic::complementary_pair;

fn main() -> amfusion::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(model) = args.first() else {
        eprintln!("usage: fuse_pair model.amfw [ir vis] [out_dir]  (train one with the train_toy example)");
        std::process::exit(2);
    };
    let params = load_weights(model, ArchConfig::toy())?;
    let (ir, vis, out_dir) = match &args[1..] {
        [ir, vis, rest @ ..] => (load_gray(ir)?, load_gray(vis)?, rest.first().map(PathBuf::from)),
        rest => {
            let (_, a, b) = complementary_pair(64, 500, 3);
            (a, b, rest.first().map(PathBuf::from))
        }
    };
    let out_dir = out_dir.unwrap_or_else(std::env::temp_dir);
    save_image(&ir, out_dir.join("source_ir.pgm"))?;
    save_image(&vis, out_dir.join("source_vis.pgm"))?;
    println!("ir   SF {:.3} EN {:.3}", sf(&ir), en(&ir));
    println!("vis  SF {:.3} EN {:.3}", sf(&vis), en(&vis));
    for kind in FusionKind::ALL {
        let fused = fuse_forward::<f32>(&to_tensor(&ir), &to_tensor(&vis), &params, FusionStrategy::new(kind))?;
        let path = out_dir.join(format!("fused_{}.pgm", kind.flag()));
        save_gray(&fused, &path)?;
        let img = GrayImageU8::from_tensor(&fused)?;
        println!("{:<4} SF {:.3} EN {:.3} -> {}", kind.flag(), sf(&img), en(&img), path.display());
    }
    Ok(())
}
