//! Test-time rules that merge the infrared and visible feature stacks.
//!
//! All rules take two `[B, C, H, W]` stacks and return a convex combination of
//! them, computed independently for every batch item.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionKind {
    /// Elementwise mean of the two stacks.
    WeightedAverage,
    /// One scalar weight per source, proportional to the L1 mass of its whole stack.
    L1Norm,
    /// Per-pixel weights from a 3x3 box-filtered channel-wise L1 activity map.
    MeanFilter,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [Self::WeightedAverage, Self::L1Norm, Self::MeanFilter];

    /// Short name used on the command line.
    pub fn flag(&self) -> &'static str {
        match self {
            Self::WeightedAverage => "avg",
            Self::L1Norm => "l1",
            Self::MeanFilter => "mean",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Self::WeightedAverage),
            "l1" => Ok(Self::L1Norm),
            "mean" => Ok(Self::MeanFilter),
            other => Err(Error::Config(format!(
                "unknown fusion strategy {other:?} (expected avg, l1 or mean)"
            ))),
        }
    }
}

/// A fusion rule plus the threshold below which total activity counts as zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionStrategy {
    pub kind: FusionKind,
    pub epsilon: f64,
}

impl Default for FusionStrategy {
    fn default() -> Self {
        Self::new(FusionKind::L1Norm)
    }
}

impl From<FusionKind> for FusionStrategy {
    fn from(kind: FusionKind) -> Self {
        Self::new(kind)
    }
}

impl FusionStrategy {
    pub const DEFAULT_EPSILON: f64 = 1e-12;

    pub fn new(kind: FusionKind) -> Self {
        Self {
            kind,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn apply<T: Real>(&self, f1: &Tensor<T>, f2: &Tensor<T>) -> Result<Tensor<T>> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "fusion epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        match self.kind {
            FusionKind::WeightedAverage => fuse_weighted_average(f1, f2),
            FusionKind::L1Norm => fuse_l1norm(f1, f2, self.epsilon),
            FusionKind::MeanFilter => fuse_meanfilter(f1, f2, self.epsilon),
        }
    }
}

fn check_pair<T: Real>(f1: &Tensor<T>, f2: &Tensor<T>) -> Result<[usize; 4]> {
    if f1.shape() != f2.shape() {
        return Err(Error::shape(format!(
            "fusion inputs differ in shape: {:?} vs {:?}",
            f1.shape(),
            f2.shape()
        )));
    }
    f1.dims4()
}

/// `(f1 + f2) / 2`.
pub fn fuse_weighted_average<T: Real>(f1: &Tensor<T>, f2: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair(f1, f2)?;
    let half = T::from_f64(0.5);
    f1.zip_map(f2, |a, b| a * half + b * half)
}

/// Scalar weights `(w1, w2)` per batch item, from the L1 mass of each stack.
///
/// When both stacks are (numerically) all zero the weights split evenly.
pub fn l1norm_weights<T: Real>(f1: &Tensor<T>, f2: &Tensor<T>, epsilon: f64) -> Result<Vec<(f64, f64)>> {
    let [b, c, h, w] = check_pair(f1, f2)?;
    let item = c * h * w;
    let mass = |t: &Tensor<T>, bi: usize| -> f64 {
        t.data()[bi * item..(bi + 1) * item]
            .iter()
            .map(|v| v.as_f64().abs())
            .sum()
    };
    Ok((0..b)
        .map(|bi| {
            let (m1, m2) = (mass(f1, bi), mass(f2, bi));
            let total = m1 + m2;
            if total <= epsilon {
                log::warn!("l1-norm fusion: both feature stacks vanish in item {bi}; splitting evenly");
                (0.5, 0.5)
            } else {
                (m1 / total, m2 / total)
            }
        })
        .collect())
}

pub fn fuse_l1norm<T: Real>(f1: &Tensor<T>, f2: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    let [_, c, h, w] = f1.dims4()?;
    let weights = l1norm_weights(f1, f2, epsilon)?;
    let item = c * h * w;
    Ok(Tensor::from_fn(f1.shape(), |j| {
        let (w1, w2) = weights[j / item];
        T::from_f64(w1 * f1.data()[j].as_f64() + w2 * f2.data()[j].as_f64())
    }))
}

/// Channel-wise L1 activity `[B, H, W]` smoothed by a 3x3 box filter with edge replication.
pub fn activity_map<T: Real>(f: &Tensor<T>) -> Result<Vec<f64>> {
    let [b, c, h, w] = f.dims4()?;
    let plane = h * w;
    let d = f.data();
    let mut raw = vec![0.0f64; b * plane];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            for p in 0..plane {
                raw[bi * plane + p] += d[base + p].as_f64().abs();
            }
        }
    }
    let mut smooth = vec![0.0f64; b * plane];
    for bi in 0..b {
        let src = &raw[bi * plane..(bi + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in [-1isize, 0, 1] {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in [-1isize, 0, 1] {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        s += src[yy * w + xx];
                    }
                }
                smooth[bi * plane + y * w + x] = s / 9.0;
            }
        }
    }
    Ok(smooth)
}

/// Per-pixel weight maps `(w1, w2)`, each `[B, H, W]` flattened.
pub fn meanfilter_weights<T: Real>(
    f1: &Tensor<T>,
    f2: &Tensor<T>,
    epsilon: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(f1, f2)?;
    let a1 = activity_map(f1)?;
    let a2 = activity_map(f2)?;
    let mut vanished = 0usize;
    let (w1, w2) = a1
        .iter()
        .zip(&a2)
        .map(|(&x, &y)| {
            let total = x + y;
            if total <= epsilon {
                vanished += 1;
                (0.5, 0.5)
            } else {
                (x / total, y / total)
            }
        })
        .unzip();
    if vanished > 0 {
        log::warn!("mean-filter fusion: {vanished} pixels without activity; splitting evenly");
    }
    Ok((w1, w2))
}

pub fn fuse_meanfilter<T: Real>(f1: &Tensor<T>, f2: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    let [_, c, h, w] = f1.dims4()?;
    let (w1, w2) = meanfilter_weights(f1, f2, epsilon)?;
    let plane = h * w;
    Ok(Tensor::from_fn(f1.shape(), |j| {
        let bi = j / (c * plane);
        let p = bi * plane + j % plane;
        T::from_f64(w1[p] * f1.data()[j].as_f64() + w2[p] * f2.data()[j].as_f64())
    }))
}
