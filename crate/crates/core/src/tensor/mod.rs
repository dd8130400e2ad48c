//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! [`Tensor`] is a plain value: a shape plus row-major storage shared behind an
//! `Arc`, so clones are cheap and tensors are immutable once created. Gradient
//! tracking lives in [`Tape`], which hands out [`Var`] handles. Image data uses
//! the `B x C x H x W` layout throughout.
//!
//! The engine is generic over [`Real`] so that the same network and losses can
//! run in `f32` (training, inference) and `f64` (finite-difference checking).

mod conv;
pub mod gradcheck;
mod norm;
mod ops;
mod pool;
mod tape;

use std::fmt::Debug;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};

pub use conv::ConvSpec;
pub use norm::{BatchNormStats, NormMode, BN_EPS, BN_MOMENTUM};
pub use tape::{Gradients, Tape, Var};

/// Floating-point element type usable by the engine.
pub trait Real: Float + Default + Debug + Send + Sync + Sum + 'static {
    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` with explicit row/column strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major N-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Builds a tensor whose shape is known to be valid.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    /// Fills a tensor from a function of the flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// The four image dimensions `[B, C, H, W]`.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok([b, c, h, w]),
            s => Err(Error::shape(format!("expected a 4-d tensor, got shape {s:?}"))),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        )
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean_f64(&self) -> f64 {
        self.sum_f64() / self.numel() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with a numeric diagnostic if any value is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {:?} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Channel slice `[start, start + len)` of a 4-d tensor.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Self> {
        let [b, c, h, w] = self.dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "channel range {start}..{} out of bounds for {c} channels",
                start + len
            )));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            let base = (bi * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Self::from_parts(vec![b, len, h, w], out))
    }

    /// Concatenates 4-d tensors along the channel axis, first input first.
    pub fn concat_channels(xs: &[&Self]) -> Result<Self> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let [b, _, h, w] = first.dims4()?;
        let mut total = 0;
        for x in xs {
            let [xb, xc, xh, xw] = x.dims4()?;
            if (xb, xh, xw) != (b, h, w) {
                return Err(Error::shape(format!(
                    "concat: {:?} does not match batch/spatial dims of {:?}",
                    x.shape, first.shape
                )));
            }
            total += xc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for x in xs {
                let c = x.shape[1];
                let base = bi * c * plane;
                out.extend_from_slice(&x.data[base..base + c * plane]);
            }
        }
        Ok(Self::from_parts(vec![b, total, h, w], out))
    }
}

impl<T: Real> Tensor<T> {
    /// Elementwise `self + other`, shapes must match.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data_mut().iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn concat_then_narrow_recovers_slices() {
        let a = Tensor::<f32>::from_fn(&[2, 1, 2, 2], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[2, 2, 2, 2], |i| 100.0 + i as f32);
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 3, 2, 2]);
        assert_eq!(cat.narrow_channels(0, 1).unwrap(), a);
        assert_eq!(cat.narrow_channels(1, 2).unwrap(), b);
        assert_eq!(Tensor::concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 1, 3, 2]);
        assert!(matches!(
            Tensor::concat_channels(&[&a, &b]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn check_finite_reports_index() {
        let t = Tensor::<f32>::new(&[3], vec![0.0, f32::NAN, 1.0]).unwrap();
        let err = t.check_finite("probe").unwrap_err();
        assert!(err.to_string().contains("flat index 1"));
    }
}
