//! Direct-from-definition reference implementations of the nine quality
//! metrics, written without the library's helpers, plus small test utilities.
#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use amfusion::metrics::GrayImageU8;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn random_image(r: &mut impl Rng, w: usize, h: usize) -> GrayImageU8 {
    GrayImageU8::new(w, h, (0..w * h).map(|_| r.gen()).collect()).unwrap()
}

fn px(img: &GrayImageU8, x: usize, y: usize) -> f64 {
    img.pixels()[y * img.width() + x] as f64
}

pub fn en(img: &GrayImageU8) -> f64 {
    let mut counts: HashMap<u8, usize> = HashMap::new();
    for &p in img.pixels() {
        *counts.entry(p).or_default() += 1;
    }
    let n = img.pixels().len() as f64;
    -counts.values().map(|&c| c as f64 / n).map(|p| p * p.log2()).sum::<f64>()
}

/// `sum p(x,y) log2(p(x,y) / (p(x) p(y)))`.
pub fn mutual_info(x: &GrayImageU8, y: &GrayImageU8) -> f64 {
    let n = x.pixels().len() as f64;
    let mut joint: HashMap<(u8, u8), f64> = HashMap::new();
    let mut px_: HashMap<u8, f64> = HashMap::new();
    let mut py_: HashMap<u8, f64> = HashMap::new();
    for (&a, &b) in x.pixels().iter().zip(y.pixels()) {
        *joint.entry((a, b)).or_default() += 1.0 / n;
        *px_.entry(a).or_default() += 1.0 / n;
        *py_.entry(b).or_default() += 1.0 / n;
    }
    joint.iter().map(|(&(a, b), &p)| p * (p / (px_[&a] * py_[&b])).log2()).sum()
}

pub fn mi(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> f64 {
    mutual_info(a, f) + mutual_info(b, f)
}

pub fn sd(img: &GrayImageU8) -> f64 {
    let n = img.pixels().len() as f64;
    let sum: f64 = img.pixels().iter().map(|&p| p as f64).sum();
    let sq: f64 = img.pixels().iter().map(|&p| (p as f64) * (p as f64)).sum();
    let mean = sum / n;
    (sq / n - mean * mean).max(0.0).sqrt()
}

pub fn ag(img: &GrayImageU8) -> f64 {
    let (w, h) = (img.width(), img.height());
    let mut total = 0.0;
    let mut count = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let gx = px(img, x + 1, y) - px(img, x, y);
            let gy = px(img, x, y + 1) - px(img, x, y);
            total += (0.5 * (gx * gx + gy * gy)).sqrt();
            count += 1.0;
        }
    }
    total / count
}

pub fn sf(img: &GrayImageU8) -> f64 {
    let (w, h) = (img.width(), img.height());
    let (mut rf, mut nr, mut cf, mut nc) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                rf += (px(img, x + 1, y) - px(img, x, y)).powi(2);
                nr += 1.0;
            }
            if y + 1 < h {
                cf += (px(img, x, y + 1) - px(img, x, y)).powi(2);
                nc += 1.0;
            }
        }
    }
    (rf / nr + cf / nc).sqrt()
}

fn clamped(img: &GrayImageU8, x: isize, y: isize) -> f64 {
    let xx = x.max(0).min(img.width() as isize - 1) as usize;
    let yy = y.max(0).min(img.height() as isize - 1) as usize;
    px(img, xx, yy)
}

fn sobel(img: &GrayImageU8, x: usize, y: usize) -> (f64, f64) {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let (mut gx, mut gy) = (0.0, 0.0);
    for (j, (rx, ry)) in KX.iter().zip(KY.iter()).enumerate() {
        for i in 0..3 {
            let v = clamped(img, x as isize + i as isize - 1, y as isize + j as isize - 1);
            gx += rx[i] * v;
            gy += ry[i] * v;
        }
    }
    (gx, gy)
}

pub fn qabf(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> f64 {
    let strength_angle = |img: &GrayImageU8, x, y| {
        let (gx, gy) = sobel(img, x, y);
        let angle = if gx == 0.0 { FRAC_PI_2 } else { (gy / gx).atan() };
        (gx.hypot(gy), angle)
    };
    let q = |gs: f64, as_: f64, gf: f64, af: f64| {
        let g = if gs == 0.0 && gf == 0.0 {
            0.0
        } else if gs > gf {
            gf / gs
        } else {
            gs / gf
        };
        let alpha = 1.0 - (as_ - af).abs() / FRAC_PI_2;
        let qg = 0.9994 / (1.0 + (-15.0 * (g - 0.5)).exp());
        let qa = 0.9879 / (1.0 + (-22.0 * (alpha - 0.8)).exp());
        qg * qa
    };
    let (mut num, mut den) = (0.0, 0.0);
    for y in 0..f.height() {
        for x in 0..f.width() {
            let (ga, aa) = strength_angle(a, x, y);
            let (gb, ab) = strength_angle(b, x, y);
            let (gf, af) = strength_angle(f, x, y);
            num += q(ga, aa, gf, af) * ga + q(gb, ab, gf, af) * gb;
            den += ga + gb;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), range 255.
pub fn ssim_pair(x: &GrayImageU8, y: &GrayImageU8) -> f64 {
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut win = [[0.0f64; 11]; 11];
    let mut s = 0.0;
    for (j, row) in win.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (w, h) = (x.width(), x.height());
    let (mut total, mut count) = (0.0, 0.0);
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let g = win[j][i] / s;
                    let (a, b) = (px(x, ox + i, oy + j), px(y, ox + i, oy + j));
                    mx += g * a;
                    my += g * b;
                    sxx += g * a * a;
                    syy += g * b * b;
                    sxy += g * a * b;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

pub fn ssim(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> f64 {
    0.5 * (ssim_pair(a, f) + ssim_pair(b, f))
}

type Grid = Vec<Vec<f64>>;

fn grid(img: &GrayImageU8) -> Grid {
    (0..img.height()).map(|y| (0..img.width()).map(|x| px(img, x, y)).collect()).collect()
}

/// Full 2-d Gaussian filter, same size, edge replication.
fn gauss2d(g: &Grid, n: usize, sigma: f64) -> Grid {
    let r = (n / 2) as isize;
    let mut k = vec![vec![0.0; n]; n];
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            let (dx, dy) = (i as f64 - r as f64, j as f64 - r as f64);
            k[j][i] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            s += k[j][i];
        }
    }
    let (h, w) = (g.len() as isize, g[0].len() as isize);
    (0..h)
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut acc = 0.0;
                    for j in 0..n as isize {
                        for i in 0..n as isize {
                            let yy = (y + j - r).clamp(0, h - 1) as usize;
                            let xx = (x + i - r).clamp(0, w - 1) as usize;
                            acc += k[j as usize][i as usize] / s * g[yy][xx];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn every_other(g: &Grid) -> Grid {
    g.iter().step_by(2).map(|row| row.iter().step_by(2).copied().collect()).collect()
}

fn prod(a: &Grid, b: &Grid) -> Grid {
    a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).collect()).collect()
}

pub fn vif_single(reference: &GrayImageU8, dist: &GrayImageU8) -> f64 {
    let eps = 1e-10;
    let noise = 2.0;
    let (mut r, mut d) = (grid(reference), grid(dist));
    let (mut num, mut den) = (0.0, 0.0);
    for (scale, n) in [17usize, 9, 5, 3].into_iter().enumerate() {
        let sigma = n as f64 / 5.0;
        if scale > 0 {
            r = every_other(&gauss2d(&r, n, sigma));
            d = every_other(&gauss2d(&d, n, sigma));
        }
        let (mu1, mu2) = (gauss2d(&r, n, sigma), gauss2d(&d, n, sigma));
        let (e11, e22, e12) = (gauss2d(&prod(&r, &r), n, sigma), gauss2d(&prod(&d, &d), n, sigma), gauss2d(&prod(&r, &d), n, sigma));
        for y in 0..r.len() {
            for x in 0..r[0].len() {
                let s1 = (e11[y][x] - mu1[y][x] * mu1[y][x]).max(0.0);
                let s2 = (e22[y][x] - mu2[y][x] * mu2[y][x]).max(0.0);
                let s12 = e12[y][x] - mu1[y][x] * mu2[y][x];
                // distortion model d = g r + v
                let (g, sv, s1) = if s1 < eps {
                    (0.0, if s2 < eps { 0.0 } else { s2 }, 0.0)
                } else if s2 < eps {
                    (0.0, 0.0, s1)
                } else {
                    let g = s12 / (s1 + eps);
                    if g < 0.0 {
                        (0.0, s2, s1)
                    } else {
                        (g, s2 - g * s12, s1)
                    }
                };
                let sv = sv.max(eps);
                num += (1.0 + g * g * s1 / (sv + noise)).log10();
                den += (1.0 + s1 / noise).log10();
            }
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn vif(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> f64 {
    0.5 * (vif_single(a, f) + vif_single(b, f))
}

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let num = n * sxy - sx * sy;
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn scd(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> f64 {
    let v = |img: &GrayImageU8| img.pixels().iter().map(|&p| p as f64).collect::<Vec<_>>();
    let (va, vb, vf) = (v(a), v(b), v(f));
    let d1: Vec<f64> = vf.iter().zip(&vb).map(|(f, b)| f - b).collect();
    let d2: Vec<f64> = vf.iter().zip(&va).map(|(f, a)| f - a).collect();
    corr(&d1, &va) + corr(&d2, &vb)
}

pub fn all(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> [f64; 9] {
    [en(f), ag(f), mi(a, b, f), sd(f), sf(f), qabf(a, b, f), ssim(a, b, f), vif(a, b, f), scd(a, b, f)]
}
