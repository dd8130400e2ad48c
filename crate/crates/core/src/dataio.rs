//! Grayscale image files, preprocessing into network input and pair discovery.
//!
//! PGM (binary `P5`, maxval 255) is read and written natively; PNG goes
//! through the `png` crate.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::GrayImageU8;
use crate::tensor::{Real, Tensor};

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

/// Parses a binary PGM with maxval 255. Header comments (`#`) are allowed.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImageU8> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err(format_err(path, "not a binary PGM (expected P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token(&mut pos)?;
        t.parse().map_err(|_| format_err(path, format!("bad PGM {what} {t:?}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported PGM maxval {maxval} (only 8-bit)")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h;
    if bytes.len() < pos + need {
        return Err(format_err(path, format!("PGM raster truncated: need {need} bytes")));
    }
    GrayImageU8::new(w, h, bytes[pos..pos + need].to_vec())
        .map_err(|e| format_err(path, e.to_string()))
}

pub fn encode_pgm(img: &GrayImageU8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// ITU-R 601 luma, rounded.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().clamp(0.0, 255.0) as u8
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<GrayImageU8> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(|e| format_err(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(path, format!("unsupported PNG bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let pixels = match info.color_type {
        png::ColorType::Grayscale => (0..h)
            .flat_map(|y| data[y * info.line_size..y * info.line_size + w].iter().copied())
            .collect(),
        png::ColorType::Rgb => (0..h)
            .flat_map(|y| {
                let row = &data[y * info.line_size..y * info.line_size + 3 * w];
                row.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect::<Vec<_>>()
            })
            .collect(),
        other => {
            return Err(format_err(path, format!("unsupported PNG color type {other:?}")));
        }
    };
    GrayImageU8::new(w, h, pixels).map_err(|e| format_err(path, e.to_string()))
}

fn encode_png(img: &GrayImageU8, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| format_err(path, e.to_string()))?;
    w.write_image_data(img.pixels()).map_err(|e| format_err(path, e.to_string()))?;
    w.finish().map_err(|e| format_err(path, e.to_string()))
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

/// Loads a PGM or PNG file as 8-bit grayscale; RGB PNGs are converted with [`luma`].
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImageU8> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes, path)
    } else {
        Err(format_err(path, "unrecognized image format (expected PGM P5 or PNG)"))
    }
}

/// Writes an image as PGM or PNG, chosen by the file extension.
pub fn save_image(img: &GrayImageU8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("pgm") => fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e)),
        Some("png") => encode_png(img, path),
        _ => Err(format_err(path, "output extension must be .pgm or .png")),
    }
}

/// Quantizes a `[1, 1, H, W]` tensor in [-1, 1] and writes it.
pub fn save_gray<T: Real>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    save_image(&GrayImageU8::from_tensor(t)?, path)
}

/// Top-left-biased center crop of `side x side`.
pub fn center_crop(img: &GrayImageU8, side: usize) -> Result<GrayImageU8> {
    let (w, h) = (img.width(), img.height());
    if w < side || h < side {
        return Err(Error::Input(format!("image {w}x{h} is smaller than the {side}x{side} crop")));
    }
    let (ox, oy) = ((w - side) / 2, (h - side) / 2);
    let pixels = (0..side)
        .flat_map(|y| (0..side).map(move |x| (x, y)))
        .map(|(x, y)| img.get(ox + x, oy + y))
        .collect();
    GrayImageU8::new(side, side, pixels)
}

/// Center crop to `side x side` and map `v -> v / 127.5 - 1`.
pub fn preprocess<T: Real>(img: &GrayImageU8, side: usize) -> Result<Tensor<T>> {
    let c = center_crop(img, side)?;
    Ok(to_tensor(&c))
}

/// Whole image as a `[1, 1, H, W]` tensor in [-1, 1].
pub fn to_tensor<T: Real>(img: &GrayImageU8) -> Tensor<T> {
    Tensor::from_fn(&[1, 1, img.height(), img.width()], |i| {
        T::from_f64(img.pixels()[i] as f64 / 127.5 - 1.0)
    })
}

/// Inverse of [`to_tensor`] up to quantization.
pub fn to_image<T: Real>(t: &Tensor<T>) -> Result<GrayImageU8> {
    GrayImageU8::from_tensor(t)
}

/// Registered infrared/visible pair sharing a filename stem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPaths {
    pub id: String,
    pub ir: PathBuf,
    pub vis: PathBuf,
}

/// Result of matching two directories.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairListing {
    pub pairs: Vec<PairPaths>,
    pub warnings: Vec<String>,
}

impl PairListing {
    pub fn ids(&self) -> Vec<&str> {
        self.pairs.iter().map(|p| p.id.as_str()).collect()
    }
}

/// Image files (`.pgm`, `.png`) in `dir` keyed by stem. Stems are compared case-sensitively.
pub fn list_images(dir: &Path, warnings: &mut Vec<String>) -> Result<BTreeMap<String, PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(extension(p).as_deref(), Some("pgm" | "png")))
        .collect();
    files.sort();
    let mut out = BTreeMap::new();
    for f in files {
        let Some(stem) = f.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            warnings.push(format!("skipping non-UTF-8 file name {}", f.display()));
            continue;
        };
        if let Some(prev) = out.get(&stem) {
            warnings.push(format!(
                "{}: duplicate stem {stem:?}, keeping {}",
                f.display(),
                Path::new(prev).display()
            ));
            continue;
        }
        out.insert(stem, f);
    }
    Ok(out)
}

/// Matches files by identical stem, in lexicographic order. Unmatched files become warnings.
pub fn discover_pairs(ir_dir: impl AsRef<Path>, vis_dir: impl AsRef<Path>) -> Result<PairListing> {
    let mut warnings = Vec::new();
    let ir = list_images(ir_dir.as_ref(), &mut warnings)?;
    let vis = list_images(vis_dir.as_ref(), &mut warnings)?;
    let mut pairs = Vec::new();
    for (stem, path) in &ir {
        match vis.get(stem) {
            Some(v) => pairs.push(PairPaths { id: stem.clone(), ir: path.clone(), vis: v.clone() }),
            None => warnings.push(format!("{stem}: no visible counterpart for {}", path.display())),
        }
    }
    for (stem, path) in &vis {
        if !ir.contains_key(stem) {
            warnings.push(format!("{stem}: no infrared counterpart for {}", path.display()));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(PairListing { pairs, warnings })
}

/// Preprocessed pair, both `[1, 1, side, side]` in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair<T: Real = f32> {
    pub id: String,
    pub ir: Tensor<T>,
    pub vis: Tensor<T>,
}

impl<T: Real> ImagePair<T> {
    pub fn new(id: impl Into<String>, ir: Tensor<T>, vis: Tensor<T>) -> Result<Self> {
        let id = id.into();
        if ir.shape() != vis.shape() {
            return Err(Error::Input(format!(
                "pair {id}: infrared {:?} and visible {:?} differ",
                ir.shape(),
                vis.shape()
            )));
        }
        Ok(Self { id, ir, vis })
    }

    pub fn load(paths: &PairPaths, side: usize) -> Result<Self> {
        let ir = preprocess(&load_gray(&paths.ir)?, side)?;
        let vis = preprocess(&load_gray(&paths.vis)?, side)?;
        Self::new(paths.id.clone(), ir, vis)
    }
}
