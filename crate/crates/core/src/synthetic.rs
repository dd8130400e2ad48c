//! Seeded synthetic scenes for demos and tests when no image data is at hand.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::dataio::{to_tensor, ImagePair};
use crate::error::Result;
use crate::metrics::GrayImageU8;

/// Sharp scene: a shaded background, a few flat rectangles and disks, and a
/// striped patch for fine texture.
pub fn scene(side: usize, seed: u64) -> GrayImageU8 {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let s = side as f64;
    let (gx, gy) = (rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0));
    let mut v: Vec<f64> = (0..side * side)
        .map(|i| 110.0 + gx * ((i % side) as f64 / s - 0.5) + gy * ((i / side) as f64 / s - 0.5))
        .collect();
    for _ in 0..4 {
        let (x0, y0) = (rng.gen_range(0.0..s * 0.8), rng.gen_range(0.0..s * 0.8));
        let (w, h) = (rng.gen_range(s * 0.1..s * 0.4), rng.gen_range(s * 0.1..s * 0.4));
        let level = rng.gen_range(20.0..235.0);
        for y in 0..side {
            for x in 0..side {
                let (xf, yf) = (x as f64, y as f64);
                if xf >= x0 && xf < x0 + w && yf >= y0 && yf < y0 + h {
                    v[y * side + x] = level;
                }
            }
        }
    }
    for _ in 0..3 {
        let (cx, cy, r) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s), rng.gen_range(s * 0.05..s * 0.2));
        let level = rng.gen_range(20.0..235.0);
        for y in 0..side {
            for x in 0..side {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    v[y * side + x] = level;
                }
            }
        }
    }
    let (px, py) = (rng.gen_range(0..side / 2), rng.gen_range(0..side / 2));
    let period = rng.gen_range(2..5);
    for y in py..py + side / 3 {
        for x in px..px + side / 3 {
            if (x / period) % 2 == 0 {
                v[y * side + x] = (v[y * side + x] + 60.0).min(255.0);
            }
        }
    }
    let pixels = v.iter().map(|p| p.round().clamp(0.0, 255.0) as u8).collect();
    GrayImageU8::new(side, side, pixels).expect("side >= 2")
}

/// Repeated 3x3 box blur with edge replication, restricted to columns in `cols`.
pub fn blur_columns(img: &GrayImageU8, cols: std::ops::Range<usize>, passes: usize) -> GrayImageU8 {
    let (w, h) = (img.width(), img.height());
    let mut v: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
    for _ in 0..passes {
        let src = v.clone();
        for y in 0..h {
            for x in cols.clone() {
                let mut s = 0.0;
                for dy in [-1isize, 0, 1] {
                    for dx in [-1isize, 0, 1] {
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        s += src[yy * w + xx];
                    }
                }
                v[y * w + x] = s / 9.0;
            }
        }
    }
    let pixels = v.iter().map(|p| p.round().clamp(0.0, 255.0) as u8).collect();
    GrayImageU8::new(w, h, pixels).expect("same size")
}

/// Pair whose sources each hold half of the scene's detail: the first is
/// blurred on its right half, the second on its left half.
pub fn complementary_pair(side: usize, seed: u64, passes: usize) -> (GrayImageU8, GrayImageU8, GrayImageU8) {
    let s = scene(side, seed);
    let a = blur_columns(&s, side / 2..side, passes);
    let b = blur_columns(&s, 0..side / 2, passes);
    (s, a, b)
}

/// Second modality of a scene: a monotone-free intensity remap that keeps every
/// edge but changes contrast polarity in places, loosely like a thermal view.
pub fn thermal_view(img: &GrayImageU8) -> GrayImageU8 {
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| (1.4 * (p as f64 - 128.0).abs() + 40.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImageU8::new(img.width(), img.height(), pixels).expect("same size")
}

/// `n` sharp two-modality pairs as network input: `(thermal_view(scene), scene)`.
pub fn training_pairs(n: usize, side: usize, seed: u64) -> Result<Vec<ImagePair<f32>>> {
    (0..n)
        .map(|k| {
            let s = scene(side, seed.wrapping_add(k as u64));
            ImagePair::new(format!("synthetic{k:02}"), to_tensor(&thermal_view(&s)), to_tensor(&s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{en, sf};

    #[test]
    fn blurring_removes_detail() {
        let (s, a, b) = complementary_pair(64, 1, 3);
        assert!(sf(&a) < sf(&s) && sf(&b) < sf(&s));
        assert_eq!(scene(32, 4), scene(32, 4));
        assert!(en(&s) > 2.0);
    }
}
