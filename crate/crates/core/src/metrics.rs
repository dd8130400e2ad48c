//! Fusion quality metrics on 8-bit images, per-pair reports and the
//! normalized ranking index.
//!
//! Two-source metrics take `(a, b, fused)`; single-image metrics look only at
//! the fused image.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::losses::{ssim_value, SsimConfig};
use crate::tensor::{Real, Tensor};

/// Column order used in every report.
pub const METRIC_NAMES: [&str; 9] = ["EN", "AG", "MI", "SD", "SF", "Qabf", "SSIM", "VIF", "SCD"];

/// Grayscale image with 8-bit pixels in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImageU8 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImageU8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Input(format!("image must be at least 2x2, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Input(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Quantizes a `[1, 1, H, W]` (or `[H, W]`) tensor in [-1, 1] with `round((v + 1) * 127.5)`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [1, 1, h, w] | [h, w] => (h, w),
            _ => return Err(Error::shape(format!("expected a single plane, got {:?}", t.shape()))),
        };
        let pixels = t.data().iter().map(|v| quantize(v.as_f64())).collect();
        Self::new(w, h, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    fn values(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }

    fn same_size(&self, other: &Self) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Input(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// `round((v + 1) * 127.5)` clamped to `0..=255`.
pub fn quantize(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

fn check3(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> Result<()> {
    a.same_size(b)?;
    a.same_size(f)
}

fn histogram(img: &GrayImageU8) -> [f64; 256] {
    let mut h = [0.0; 256];
    for &p in &img.pixels {
        h[p as usize] += 1.0;
    }
    h
}

fn entropy_of(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy of the 256-bin histogram, in bits.
pub fn en(img: &GrayImageU8) -> f64 {
    entropy_of(&histogram(img))
}

/// Mutual information of two equally sized images, in bits.
pub fn mutual_information(x: &GrayImageU8, y: &GrayImageU8) -> Result<f64> {
    x.same_size(y)?;
    let mut joint = vec![0.0f64; 256 * 256];
    for (&p, &q) in x.pixels.iter().zip(&y.pixels) {
        joint[p as usize * 256 + q as usize] += 1.0;
    }
    let hx = entropy_of(&histogram(x));
    let hy = entropy_of(&histogram(y));
    // I(X;Y) = H(X) + H(Y) - H(X,Y); clamp the rounding noise at zero
    Ok((hx + hy - entropy_of(&joint)).max(0.0))
}

/// `MI(a, fused) + MI(b, fused)`.
pub fn mi(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> Result<f64> {
    check3(a, b, f)?;
    Ok(mutual_information(a, f)? + mutual_information(b, f)?)
}

/// Population standard deviation of the pixel values.
pub fn sd(img: &GrayImageU8) -> f64 {
    let v = img.values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Mean of `sqrt((dx^2 + dy^2) / 2)` over the `(H-1) x (W-1)` forward-difference grid.
pub fn ag(img: &GrayImageU8) -> f64 {
    let (w, h) = (img.width, img.height);
    let v = img.values();
    let mut s = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = v[y * w + x + 1] - v[y * w + x];
            let dy = v[(y + 1) * w + x] - v[y * w + x];
            s += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    s / ((h - 1) * (w - 1)) as f64
}

/// `sqrt(RF^2 + CF^2)` from squared horizontal and vertical forward differences.
pub fn sf(img: &GrayImageU8) -> f64 {
    let (w, h) = (img.width, img.height);
    let v = img.values();
    let mut rf = 0.0;
    for y in 0..h {
        for x in 0..w - 1 {
            rf += (v[y * w + x + 1] - v[y * w + x]).powi(2);
        }
    }
    let mut cf = 0.0;
    for y in 0..h - 1 {
        for x in 0..w {
            cf += (v[(y + 1) * w + x] - v[y * w + x]).powi(2);
        }
    }
    let rf = rf / (h * (w - 1)) as f64;
    let cf = cf / ((h - 1) * w) as f64;
    (rf + cf).sqrt()
}

/// Sobel responses `(gx, gy)` with edge replication, same size as the input.
fn sobel_same(img: &GrayImageU8) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width as isize, img.height as isize);
    let px = |x: isize, y: isize| -> f64 {
        img.pixels[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize] as f64
    };
    let mut gx = Vec::with_capacity((w * h) as usize);
    let mut gy = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            gx.push(
                px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)
                    - px(x - 1, y - 1)
                    - 2.0 * px(x - 1, y)
                    - px(x - 1, y + 1),
            );
            gy.push(
                px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)
                    - px(x - 1, y - 1)
                    - 2.0 * px(x, y - 1)
                    - px(x + 1, y - 1),
            );
        }
    }
    (gx, gy)
}

/// Edge strength and orientation per pixel.
fn edges(img: &GrayImageU8) -> (Vec<f64>, Vec<f64>) {
    let (gx, gy) = sobel_same(img);
    let g = gx.iter().zip(&gy).map(|(x, y)| (x * x + y * y).sqrt()).collect();
    let a = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| if x == 0.0 { FRAC_PI_2 } else { (y / x).atan() })
        .collect();
    (g, a)
}

pub const QABF_GAMMA_G: f64 = 0.9994;
pub const QABF_K_G: f64 = -15.0;
pub const QABF_SIGMA_G: f64 = 0.5;
pub const QABF_GAMMA_A: f64 = 0.9879;
pub const QABF_K_A: f64 = -22.0;
pub const QABF_SIGMA_A: f64 = 0.8;

/// Edge preservation of one source in the fused image, per pixel.
fn preservation(gs: &[f64], as_: &[f64], gf: &[f64], af: &[f64]) -> Vec<f64> {
    (0..gs.len())
        .map(|i| {
            let (lo, hi) = if gs[i] > gf[i] { (gf[i], gs[i]) } else { (gs[i], gf[i]) };
            let g = if hi == 0.0 { 0.0 } else { lo / hi };
            let a = 1.0 - (as_[i] - af[i]).abs() / FRAC_PI_2;
            let qg = QABF_GAMMA_G / (1.0 + (QABF_K_G * (g - QABF_SIGMA_G)).exp());
            let qa = QABF_GAMMA_A / (1.0 + (QABF_K_A * (a - QABF_SIGMA_A)).exp());
            qg * qa
        })
        .collect()
}

/// Gradient-based edge preservation, weighted by source edge strength.
///
/// Returns 0 when neither source has any edge.
pub fn qabf(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> Result<f64> {
    check3(a, b, f)?;
    let (ga, aa) = edges(a);
    let (gb, ab) = edges(b);
    let (gf, af) = edges(f);
    let qa = preservation(&ga, &aa, &gf, &af);
    let qb = preservation(&gb, &ab, &gf, &af);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..ga.len() {
        num += qa[i] * ga[i] + qb[i] * gb[i];
        den += ga[i] + gb[i];
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

fn as_tensor(img: &GrayImageU8) -> Tensor<f64> {
    Tensor::from_fn(&[1, 1, img.height, img.width], |i| img.pixels[i] as f64)
}

/// Mean of windowed SSIM(a, fused) and SSIM(b, fused) with dynamic range 255.
pub fn ssim_metric(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> Result<f64> {
    check3(a, b, f)?;
    let cfg = SsimConfig::toy().with_range(255.0);
    let ft = as_tensor(f);
    Ok((ssim_value(&as_tensor(a), &ft, &cfg)? + ssim_value(&as_tensor(b), &ft, &cfg)?) / 2.0)
}

/// Noise variance of the VIF channel model.
pub const VIF_NOISE_VAR: f64 = 2.0;

/// Plane of `f64` values.
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn of(img: &GrayImageU8) -> Self {
        Plane { w: img.width, h: img.height, v: img.values() }
    }

    /// Separable Gaussian blur, same size, edge replication.
    fn blur(&self, n: usize, sigma: f64) -> Plane {
        let r = (n / 2) as isize;
        let k: Vec<f64> = (0..n)
            .map(|i| {
                let d = i as f64 - r as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = k.iter().sum();
        let k: Vec<f64> = k.iter().map(|v| v / s).collect();
        let (w, h) = (self.w as isize, self.h as isize);
        let mut tmp = vec![0.0; self.v.len()];
        for y in 0..h {
            for x in 0..w {
                tmp[(y * w + x) as usize] = (0..n as isize)
                    .map(|i| k[i as usize] * self.v[(y * w + (x + i - r).clamp(0, w - 1)) as usize])
                    .sum();
            }
        }
        let mut out = vec![0.0; self.v.len()];
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) as usize] = (0..n as isize)
                    .map(|i| k[i as usize] * tmp[((y + i - r).clamp(0, h - 1) * w + x) as usize])
                    .sum();
            }
        }
        Plane { w: self.w, h: self.h, v: out }
    }

    /// Keeps every other row and column, starting at the first.
    fn decimate(&self) -> Plane {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let v = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| self.v[2 * y * self.w + 2 * x])
            .collect();
        Plane { w, h, v }
    }

    fn mul(&self, o: &Plane) -> Plane {
        Plane { w: self.w, h: self.h, v: self.v.iter().zip(&o.v).map(|(a, b)| a * b).collect() }
    }
}

/// Information fidelity of `dist` with respect to `reference`, four scales.
pub fn vif_single(reference: &GrayImageU8, dist: &GrayImageU8) -> Result<f64> {
    reference.same_size(dist)?;
    const EPS: f64 = 1e-10;
    let mut r = Plane::of(reference);
    let mut d = Plane::of(dist);
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=4u32 {
        let n = (1usize << (4 - scale + 1)) + 1;
        let sigma = n as f64 / 5.0;
        if scale > 1 {
            r = r.blur(n, sigma).decimate();
            d = d.blur(n, sigma).decimate();
        }
        let mu1 = r.blur(n, sigma);
        let mu2 = d.blur(n, sigma);
        let s11 = r.mul(&r).blur(n, sigma);
        let s22 = d.mul(&d).blur(n, sigma);
        let s12 = r.mul(&d).blur(n, sigma);
        for i in 0..r.v.len() {
            let (m1, m2) = (mu1.v[i], mu2.v[i]);
            let mut sig1 = (s11.v[i] - m1 * m1).max(0.0);
            let sig2 = (s22.v[i] - m2 * m2).max(0.0);
            let sig12 = s12.v[i] - m1 * m2;
            let mut g = sig12 / (sig1 + EPS);
            let mut sv = sig2 - g * sig12;
            if sig1 < EPS {
                g = 0.0;
                sv = sig2;
                sig1 = 0.0;
            }
            if sig2 < EPS {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = sig2;
                g = 0.0;
            }
            let sv = sv.max(EPS);
            num += (1.0 + g * g * sig1 / (sv + VIF_NOISE_VAR)).log10();
            den += (1.0 + sig1 / VIF_NOISE_VAR).log10();
        }
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

/// Mean of VIF(a -> fused) and VIF(b -> fused).
pub fn vif(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> Result<f64> {
    check3(a, b, f)?;
    Ok((vif_single(a, f)? + vif_single(b, f)?) / 2.0)
}

/// Pearson correlation; 0 when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// `r(fused - b, a) + r(fused - a, b)`.
pub fn scd(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> Result<f64> {
    check3(a, b, f)?;
    Ok(scd_values(&a.values(), &b.values(), &f.values()))
}

/// [`scd`] on unquantized values.
pub fn scd_values(a: &[f64], b: &[f64], f: &[f64]) -> f64 {
    let fb: Vec<f64> = f.iter().zip(b).map(|(x, y)| x - y).collect();
    let fa: Vec<f64> = f.iter().zip(a).map(|(x, y)| x - y).collect();
    pearson(&fb, a) + pearson(&fa, b)
}

/// All nine metrics in [`METRIC_NAMES`] order.
pub fn evaluate(a: &GrayImageU8, b: &GrayImageU8, f: &GrayImageU8) -> Result<[f64; 9]> {
    check3(a, b, f)?;
    let out = [
        en(f),
        ag(f),
        mi(a, b, f)?,
        sd(f),
        sf(f),
        qabf(a, b, f)?,
        ssim_metric(a, b, f)?,
        vif(a, b, f)?,
        scd(a, b, f)?,
    ];
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("metric {} is not finite", METRIC_NAMES[i])));
    }
    Ok(out)
}

/// Per-pair metric rows in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    rows: Vec<(String, [f64; 9])>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pair: impl Into<String>, values: [f64; 9]) {
        self.rows.push((pair.into(), values));
    }

    pub fn rows(&self) -> &[(String, [f64; 9])] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Arithmetic mean over pairs.
    pub fn mean(&self) -> Result<[f64; 9]> {
        if self.rows.is_empty() {
            return Err(Error::Input("report has no pairs".into()));
        }
        let mut m = [0.0; 9];
        for (_, r) in &self.rows {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        Ok(m.map(|v| v / self.rows.len() as f64))
    }

    /// CSV text: header, one row per pair and a final `mean` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["pair"];
        header.extend(METRIC_NAMES);
        w.write_record(&header)?;
        let mean = self.mean()?;
        for (name, vals) in self.rows.iter().map(|(n, v)| (n.as_str(), v)).chain([("mean", &mean)]) {
            let mut rec = vec![name.to_string()];
            rec.extend(vals.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Parses report CSV. A `mean` row, if present, is dropped (it is recomputed).
    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let fmt = |message: String| Error::Format { path: origin.to_path_buf(), message };
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        let expected: Vec<&str> = std::iter::once("pair").chain(METRIC_NAMES).collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(fmt(format!("unexpected header, want {}", expected.join(","))));
        }
        let mut report = Self::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut vals = [0.0; 9];
            for (j, v) in vals.iter_mut().enumerate() {
                *v = rec[j + 1]
                    .parse()
                    .map_err(|_| fmt(format!("row {}: bad value {:?}", line + 2, &rec[j + 1])))?;
            }
            if &rec[0] != "mean" {
                report.push(&rec[0], vals);
            }
        }
        Ok(report)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}

/// `xi(i) = sum_j f_j(x_i) / max_i f_j(x_i)` over the nine metric columns.
pub fn normalized_index(table: &IndexMap<String, [f64; 9]>) -> Result<IndexMap<String, f64>> {
    if table.is_empty() {
        return Err(Error::Input("normalized index needs at least one method".into()));
    }
    let mut max = [f64::NEG_INFINITY; 9];
    for vals in table.values() {
        for (m, v) in max.iter_mut().zip(vals) {
            *m = m.max(*v);
        }
    }
    if let Some(j) = max.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::Input(format!(
            "column {} has nonpositive maximum {}",
            METRIC_NAMES[j], max[j]
        )));
    }
    Ok(table
        .iter()
        .map(|(k, vals)| (k.clone(), vals.iter().zip(&max).map(|(v, m)| v / m).sum()))
        .collect())
}

/// Parses `method,EN,...,SCD` rows (one per method) into a metric table.
pub fn parse_method_table(text: &str, origin: &Path) -> Result<IndexMap<String, [f64; 9]>> {
    let report = MetricReport::parse_csv(&text.replacen("method,", "pair,", 1), origin)?;
    let mut table = IndexMap::new();
    for (name, vals) in report.rows() {
        if table.insert(name.clone(), *vals).is_some() {
            return Err(Error::Format { path: origin.to_path_buf(), message: format!("method {name:?} listed twice") });
        }
    }
    Ok(table)
}

/// Metric means per method with their normalized index.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingTable {
    pub methods: IndexMap<String, [f64; 9]>,
    pub xi: IndexMap<String, f64>,
}

impl RankingTable {
    pub fn new(methods: IndexMap<String, [f64; 9]>) -> Result<Self> {
        let xi = normalized_index(&methods)?;
        Ok(Self { methods, xi })
    }

    /// Method names sorted by descending index; ties keep input order.
    pub fn order(&self) -> Vec<&str> {
        let mut v: Vec<(&str, f64)> = self.xi.iter().map(|(k, &x)| (k.as_str(), x)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v.into_iter().map(|(k, _)| k).collect()
    }

    fn rank_of(&self, name: &str) -> usize {
        self.order().iter().position(|&n| n == name).unwrap_or(0) + 1
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method"];
        header.extend(METRIC_NAMES);
        header.extend(["xi", "rank"]);
        w.write_record(&header)?;
        for (name, vals) in &self.methods {
            let mut rec = vec![name.clone()];
            rec.extend(vals.iter().map(|v| format!("{v:.6}")));
            rec.push(format!("{:.4}", self.xi[name]));
            rec.push(self.rank_of(name).to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Fixed-width text table in input order.
    pub fn to_text(&self) -> String {
        let name_w = self.methods.keys().map(|k| k.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{:<name_w$}", "method");
        for m in METRIC_NAMES {
            let _ = write!(s, " {m:>9}");
        }
        let _ = writeln!(s, " {:>9} {:>4}", "xi", "rank");
        for (name, vals) in &self.methods {
            let _ = write!(s, "{name:<name_w$}");
            for v in vals {
                let _ = write!(s, " {v:>9.4}");
            }
            let _ = writeln!(s, " {:>9.4} {:>4}", self.xi[name], self.rank_of(name));
        }
        s
    }
}
