//! Saves a freshly initialized model, reloads it, and shows that a flipped
//! byte is caught by the checksum.
//!
//! cargo run --example weights_roundtrip

use amfusion::nn::{read_weights, write_weights, ArchConfig, ModelParams};

fn main() -> amfusion::Result<()> {
    let params = ModelParams::<f32>::init(ArchConfig::toy(), 11)?;
    let bytes = write_weights(&params)?;
    let path = std::env::temp_dir().join("amfusion_roundtrip.amfw");
    std::fs::write(&path, &bytes).expect("temp dir is writable");
    println!("wrote {} tensors, {} bytes to {}", params.len(), bytes.len(), path.display());

    let back = read_weights(&std::fs::read(&path).expect("just written"), ArchConfig::toy())?;
    let identical = params
        .iter()
        .zip(back.iter())
        .all(|((n1, a), (n2, b))| n1 == n2 && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    println!("bitwise identical after reload: {identical}");

    let mut corrupt = bytes.clone();
    corrupt[bytes.len() / 2] ^= 0x40;
    match read_weights(&corrupt, ArchConfig::toy()) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted copy rejected: {e}"),
    }
    let _ = std::fs::remove_file(&path);
    Ok(())
}
