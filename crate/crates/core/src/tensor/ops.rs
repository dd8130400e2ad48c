//! Elementwise, broadcasting, reduction and layout ops.

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// For each flat index of `lhs`, the flat index of the broadcast `rhs` element.
///
/// `rhs` must have the same rank as `lhs` with every dim equal or 1, or be a
/// single-element tensor.
fn broadcast_map(lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    let n: usize = lhs.iter().product();
    if rhs.iter().product::<usize>() == 1 {
        return Ok(vec![0; n]);
    }
    if rhs.len() != lhs.len() || lhs.iter().zip(rhs).any(|(&l, &r)| r != l && r != 1) {
        return Err(Error::shape(format!("cannot broadcast {rhs:?} onto {lhs:?}")));
    }
    let rank = lhs.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if rhs[d] == 1 { 0 } else { acc };
        acc *= rhs[d];
    }
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        map.push(offset);
        for d in (0..rank).rev() {
            counter[d] += 1;
            offset += strides[d];
            if counter[d] < lhs[d] {
                break;
            }
            offset -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    Ok(map)
}

/// Sums `values` (lhs-shaped) into an rhs-shaped tensor via `map`, in f64.
fn reduce_to<T: Real>(values: &[T], map: &[usize], shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut acc = vec![0.0f64; n];
    for (&v, &j) in values.iter().zip(map) {
        acc[j] += v.as_f64();
    }
    Tensor::from_parts(shape.to_vec(), acc.into_iter().map(T::from_f64).collect())
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Real> Tape<T> {
    fn binary(&self, a: &Var<T>, b: &Var<T>, op: BinOp) -> Result<Var<T>> {
        let map = broadcast_map(a.shape(), b.shape())?;
        let ad = a.value().data();
        let bd = b.value().data();
        let out: Vec<T> = ad
            .iter()
            .zip(&map)
            .map(|(&x, &j)| {
                let y = bd[j];
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::from_parts(a.shape().to_vec(), out);
        let av = a.value().clone();
        let bv = b.value().clone();
        Ok(self.record(
            value,
            &[a, b],
            Box::new(move |g, need| {
                let gd = g.data();
                let ad = av.data();
                let bd = bv.data();
                let ga = need[0].then(|| {
                    let data: Vec<T> = match op {
                        BinOp::Add | BinOp::Sub => gd.to_vec(),
                        BinOp::Mul => gd.iter().zip(&map).map(|(&g, &j)| g * bd[j]).collect(),
                        BinOp::Div => gd.iter().zip(&map).map(|(&g, &j)| g / bd[j]).collect(),
                    };
                    Tensor::from_parts(av.shape().to_vec(), data)
                });
                let gb = need[1].then(|| {
                    let per_elem: Vec<T> = match op {
                        BinOp::Add => gd.to_vec(),
                        BinOp::Sub => gd.iter().map(|&g| -g).collect(),
                        BinOp::Mul => gd.iter().zip(ad).map(|(&g, &x)| g * x).collect(),
                        BinOp::Div => gd
                            .iter()
                            .zip(ad)
                            .zip(&map)
                            .map(|((&g, &x), &j)| -g * x / (bd[j] * bd[j]))
                            .collect(),
                    };
                    reduce_to(&per_elem, &map, bv.shape())
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `a + b`, with `b` broadcast onto `a`'s shape.
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary(a, b, BinOp::Add)
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary(a, b, BinOp::Sub)
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary(a, b, BinOp::Mul)
    }

    pub fn div(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.binary(a, b, BinOp::Div)
    }

    /// Elementwise map with derivative `df(x, y)` expressed in terms of input and output.
    fn unary(
        &self,
        x: &Var<T>,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<T> {
        let value = x.value().map(f);
        let xv = x.value().clone();
        let yv = value.clone();
        self.record(
            value,
            &[x],
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .zip(yv.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::from_parts(xv.shape().to_vec(), data))]
            }),
        )
    }

    pub fn scale(&self, x: &Var<T>, k: T) -> Var<T> {
        self.unary(x, move |v| v * k, move |_, _| k)
    }

    pub fn add_scalar(&self, x: &Var<T>, c: T) -> Var<T> {
        self.unary(x, move |v| v + c, |_, _| T::one())
    }

    pub fn neg(&self, x: &Var<T>) -> Var<T> {
        self.scale(x, -T::one())
    }

    pub fn square(&self, x: &Var<T>) -> Var<T> {
        self.unary(x, |v| v * v, |x, _| x + x)
    }

    /// `|x|`, with subgradient 0 at the origin.
    pub fn abs(&self, x: &Var<T>) -> Var<T> {
        self.unary(x, |v| v.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn relu(&self, x: &Var<T>) -> Var<T> {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self, x: &Var<T>) -> Var<T> {
        self.unary(
            x,
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(&self, x: &Var<T>) -> Var<T> {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// Parametric ReLU with a single learnable slope `a` (shape `[1]`).
    pub fn prelu(&self, x: &Var<T>, a: &Var<T>) -> Result<Var<T>> {
        if a.value().numel() != 1 {
            return Err(Error::shape(format!(
                "prelu slope must be a scalar, got {:?}",
                a.shape()
            )));
        }
        let slope = a.value().item();
        let value = x.value().map(|v| if v > T::zero() { v } else { slope * v });
        let xv = x.value().clone();
        let av = a.value().clone();
        Ok(self.record(
            value,
            &[x, a],
            Box::new(move |g, need| {
                let gd = g.data();
                let xd = xv.data();
                let gx = need[0].then(|| {
                    let data = gd
                        .iter()
                        .zip(xd)
                        .map(|(&g, &x)| if x > T::zero() { g } else { g * slope })
                        .collect();
                    Tensor::from_parts(xv.shape().to_vec(), data)
                });
                let ga = need[1].then(|| {
                    let s: f64 = gd
                        .iter()
                        .zip(xd)
                        .filter(|(_, &x)| x <= T::zero())
                        .map(|(&g, &x)| (g * x).as_f64())
                        .sum();
                    Tensor::from_parts(av.shape().to_vec(), vec![T::from_f64(s)])
                });
                vec![gx, ga]
            }),
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self, x: &Var<T>) -> Var<T> {
        let value = Tensor::scalar(T::from_f64(x.value().sum_f64()));
        let shape = x.shape().to_vec();
        self.record(
            value,
            &[x],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean(&self, x: &Var<T>) -> Var<T> {
        let n = T::from_f64(x.value().numel() as f64);
        let s = self.sum(x);
        self.scale(&s, T::one() / n)
    }

    /// Euclidean norm of all elements, shape `[1]`; the gradient at zero is zero.
    pub fn l2_norm(&self, x: &Var<T>) -> Var<T> {
        let norm = x
            .value()
            .data()
            .iter()
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt();
        let xv = x.value().clone();
        self.record(
            Tensor::scalar(T::from_f64(norm)),
            &[x],
            Box::new(move |g, _| {
                let k = if norm > 0.0 {
                    T::from_f64(g.item().as_f64() / norm)
                } else {
                    T::zero()
                };
                vec![Some(xv.scale(k))]
            }),
        )
    }

    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let value = x.value().reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.record(
            value,
            &[x],
            Box::new(move |g, _| vec![Some(g.reshape(&orig).expect("reshape back"))]),
        ))
    }

    /// Channel concatenation of 4-d tensors; `xs[0]` channels come first.
    pub fn concat_channels(&self, xs: &[&Var<T>]) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = xs.iter().map(|v| v.value()).collect();
        let value = Tensor::concat_channels(&values)?;
        let widths: Vec<usize> = xs.iter().map(|v| v.shape()[1]).collect();
        Ok(self.record(
            value,
            xs,
            Box::new(move |g, need| {
                let mut start = 0;
                widths
                    .iter()
                    .zip(need)
                    .map(|(&c, &n)| {
                        let slice = n.then(|| g.narrow_channels(start, c).expect("concat slice"));
                        start += c;
                        slice
                    })
                    .collect()
            }),
        ))
    }

    /// Channel slice of a 4-d tensor.
    pub fn narrow_channels(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let value = x.value().narrow_channels(start, len)?;
        let [b, c, h, w] = x.value().dims4()?;
        Ok(self.record(
            value,
            &[x],
            Box::new(move |g, _| {
                let plane = h * w;
                let mut out = vec![T::zero(); b * c * plane];
                let gd = g.data();
                for bi in 0..b {
                    let dst = (bi * c + start) * plane;
                    let src = bi * len * plane;
                    out[dst..dst + len * plane].copy_from_slice(&gd[src..src + len * plane]);
                }
                vec![Some(Tensor::from_parts(vec![b, c, h, w], out))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn activation_values() {
        let tape = Tape::<f64>::no_grad();
        let x = Var::constant(t(&[3], &[-1.0, 0.0, 2.0]));
        assert_eq!(tape.relu(&x).value().data(), &[0.0, 0.0, 2.0]);
        let s = tape.sigmoid(&x);
        assert_eq!(s.value().data()[1], 0.5);
        let th = tape.tanh(&x);
        assert_eq!(th.value().data()[1], 0.0);
        let a = Var::constant(Tensor::scalar(0.25));
        let y = tape.prelu(&Var::constant(t(&[1], &[-2.0])), &a).unwrap();
        assert_eq!(y.value().item(), -0.5);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let loss = tape.sum(&x);
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 3.0]));
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq);
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_on_non_scalar_is_usage_error() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = tape.scale(&x, 2.0);
        assert!(matches!(tape.backward(&y), Err(Error::Usage(_))));
    }

    #[test]
    fn broadcast_over_channels_and_pixels() {
        let tape = Tape::<f64>::no_grad();
        let x = Var::constant(Tensor::from_fn(&[1, 2, 1, 3], |i| i as f64));
        let per_channel = Var::constant(t(&[1, 2, 1, 1], &[10.0, 100.0]));
        let y = tape.mul(&x, &per_channel).unwrap();
        assert_eq!(y.value().data(), &[0.0, 10.0, 20.0, 300.0, 400.0, 500.0]);
        let per_pixel = Var::constant(t(&[1, 1, 1, 3], &[1.0, 2.0, 3.0]));
        let y = tape.mul(&x, &per_pixel).unwrap();
        assert_eq!(y.value().data(), &[0.0, 2.0, 6.0, 3.0, 8.0, 15.0]);
        let bad = Var::constant(t(&[1, 3, 1, 1], &[1.0, 2.0, 3.0]));
        assert!(tape.mul(&x, &bad).is_err());
    }

    #[test]
    fn l2_norm_at_zero_has_zero_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[4]));
        let n = tape.l2_norm(&x);
        assert_eq!(n.value().item(), 0.0);
        let g = tape.backward(&n).unwrap();
        assert!(g.get(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn untracked_inputs_record_nothing() {
        let tape = Tape::<f64>::new();
        let x = Var::constant(t(&[2], &[1.0, 2.0]));
        let y = tape.square(&x);
        assert!(!y.requires_grad());
        assert!(tape.is_empty());
    }
}
