//! 2-d convolution (cross-correlation) via im2col + GEMM, and fixed separable filters.

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Stride and zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride 1 with padding that preserves the spatial size for kernel `k`.
    pub fn same(k: usize) -> Self {
        Self {
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn valid() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one image `[Cin, H, W]` into `[Cin*k*k, Ho*Wo]`.
    fn im2col<T: Real>(&self, img: &[T], col: &mut [T]) {
        let n = self.cols();
        for ci in 0..self.cin {
            let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, slot) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *slot = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters-adds columns back into an image.
    fn col2im<T: Real>(&self, col: &[T], img: &mut [T]) {
        let n = self.cols();
        for ci in 0..self.cin {
            let plane = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &col[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                line[ix as usize] = line[ix as usize] + src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry(x: &[usize], w: &[usize], spec: ConvSpec) -> Result<(usize, usize, Geometry)> {
    let &[b, cin, h, wd] = x else {
        return Err(Error::shape(format!("conv2d input must be 4-d, got {x:?}")));
    };
    let &[cout, wcin, kh, kw] = w else {
        return Err(Error::shape(format!("conv2d weight must be 4-d, got {w:?}")));
    };
    if kh != kw || ![1, 3, 5, 7].contains(&kh) {
        return Err(Error::shape(format!(
            "conv2d kernel must be square 1, 3, 5 or 7, got {kh}x{kw}"
        )));
    }
    if wcin != cin {
        return Err(Error::shape(format!(
            "conv2d input has {cin} channels but weight expects {wcin}"
        )));
    }
    if spec.stride == 0 {
        return Err(Error::shape("conv2d stride must be positive"));
    }
    if h + 2 * spec.padding < kh || wd + 2 * spec.padding < kh {
        return Err(Error::shape(format!(
            "conv2d input {h}x{wd} with padding {} is smaller than kernel {kh}",
            spec.padding
        )));
    }
    let ho = (h + 2 * spec.padding - kh) / spec.stride + 1;
    let wo = (wd + 2 * spec.padding - kh) / spec.stride + 1;
    Ok((
        b,
        cout,
        Geometry {
            cin,
            h,
            w: wd,
            k: kh,
            stride: spec.stride,
            pad: spec.padding,
            ho,
            wo,
        },
    ))
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x: [B, Cin, H, W]` with `w: [Cout, Cin, k, k]`,
    /// zero padding, optional per-output-channel bias.
    pub fn conv2d(
        &self,
        x: &Var<T>,
        w: &Var<T>,
        bias: Option<&Var<T>>,
        spec: ConvSpec,
    ) -> Result<Var<T>> {
        let (batch, cout, g) = geometry(x.shape(), w.shape(), spec)?;
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape(format!(
                    "conv2d bias must have shape [{cout}], got {:?}",
                    b.shape()
                )));
            }
        }
        let (kk, n) = (g.rows(), g.cols());
        let in_stride = g.cin * g.h * g.w;
        let xd = x.value().data();
        let wd = w.value().data();
        let mut out = vec![T::zero(); batch * cout * n];
        let mut col = vec![T::zero(); kk * n];
        for bi in 0..batch {
            g.im2col(&xd[bi * in_stride..(bi + 1) * in_stride], &mut col);
            let dst = &mut out[bi * cout * n..(bi + 1) * cout * n];
            if let Some(b) = bias {
                for (co, chunk) in dst.chunks_mut(n).enumerate() {
                    chunk.fill(b.value().data()[co]);
                }
            }
            // SAFETY: buffers sized cout*kk, kk*n and cout*n with row-major strides.
            unsafe {
                T::gemm(
                    cout,
                    kk,
                    n,
                    T::one(),
                    wd.as_ptr(),
                    kk as isize,
                    1,
                    col.as_ptr(),
                    n as isize,
                    1,
                    if bias.is_some() { T::one() } else { T::zero() },
                    dst.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        let value = Tensor::from_parts(vec![batch, cout, g.ho, g.wo], out);

        let xv = x.value().clone();
        let wv = w.value().clone();
        let inputs: Vec<&Var<T>> = match bias {
            Some(b) => vec![x, w, b],
            None => vec![x, w],
        };
        Ok(self.record(
            value,
            &inputs,
            Box::new(move |gout, need| {
                let gd = gout.data();
                let xd = xv.data();
                let wd = wv.data();
                let need_x = need[0];
                let need_w = need[1];
                let mut gx = need_x.then(|| vec![T::zero(); xd.len()]);
                let mut gw = need_w.then(|| vec![T::zero(); wd.len()]);
                let mut col = vec![T::zero(); kk * n];
                for bi in 0..batch {
                    let go = &gd[bi * cout * n..(bi + 1) * cout * n];
                    if let Some(gw) = gw.as_mut() {
                        g.im2col(&xd[bi * in_stride..(bi + 1) * in_stride], &mut col);
                        // SAFETY: gw += go[cout, n] * col^T[n, kk].
                        unsafe {
                            T::gemm(
                                cout,
                                n,
                                kk,
                                T::one(),
                                go.as_ptr(),
                                n as isize,
                                1,
                                col.as_ptr(),
                                1,
                                n as isize,
                                T::one(),
                                gw.as_mut_ptr(),
                                kk as isize,
                                1,
                            );
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        // SAFETY: col = w^T[kk, cout] * go[cout, n].
                        unsafe {
                            T::gemm(
                                kk,
                                cout,
                                n,
                                T::one(),
                                wd.as_ptr(),
                                1,
                                kk as isize,
                                go.as_ptr(),
                                n as isize,
                                1,
                                T::zero(),
                                col.as_mut_ptr(),
                                n as isize,
                                1,
                            );
                        }
                        g.col2im(&col, &mut gx[bi * in_stride..(bi + 1) * in_stride]);
                    }
                }
                let mut grads = vec![
                    gx.map(|v| Tensor::from_parts(xv.shape().to_vec(), v)),
                    gw.map(|v| Tensor::from_parts(wv.shape().to_vec(), v)),
                ];
                if need.len() == 3 {
                    grads.push(need[2].then(|| {
                        let mut acc = vec![0.0f64; cout];
                        for bi in 0..batch {
                            for (co, a) in acc.iter_mut().enumerate() {
                                let base = (bi * cout + co) * n;
                                *a += gd[base..base + n].iter().map(|v| v.as_f64()).sum::<f64>();
                            }
                        }
                        Tensor::from_parts(vec![cout], acc.into_iter().map(T::from_f64).collect())
                    }));
                }
                grads
            }),
        ))
    }

    /// Applies a fixed 1-d kernel along rows and then columns of every plane
    /// of `x: [B, C, H, W]`, keeping only fully covered ("valid") positions.
    pub fn separable_filter_valid(&self, x: &Var<T>, kernel: &[T]) -> Result<Var<T>> {
        let [b, c, h, w] = x.value().dims4()?;
        let k = kernel.len();
        if k == 0 || h < k || w < k {
            return Err(Error::shape(format!(
                "filter of size {k} does not fit a {h}x{w} plane"
            )));
        }
        let (ho, wo) = (h - k + 1, w - k + 1);
        let kern = kernel.to_vec();
        let planes = b * c;
        let xd = x.value().data();
        let mut out = vec![T::zero(); planes * ho * wo];
        let mut tmp = vec![0.0f64; h * wo];
        for p in 0..planes {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for ox in 0..wo {
                    tmp[y * wo + ox] = (0..k)
                        .map(|i| kern[i].as_f64() * src[y * w + ox + i].as_f64())
                        .sum();
                }
            }
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let v: f64 = (0..k).map(|i| kern[i].as_f64() * tmp[(oy + i) * wo + ox]).sum();
                    dst[oy * wo + ox] = T::from_f64(v);
                }
            }
        }
        let value = Tensor::from_parts(vec![b, c, ho, wo], out);
        Ok(self.record(
            value,
            &[x],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![T::zero(); planes * h * w];
                let mut tmp = vec![0.0f64; h * wo];
                for p in 0..planes {
                    let go = &gd[p * ho * wo..(p + 1) * ho * wo];
                    tmp.fill(0.0);
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = go[oy * wo + ox].as_f64();
                            for i in 0..k {
                                tmp[(oy + i) * wo + ox] += kern[i].as_f64() * v;
                            }
                        }
                    }
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        let mut row = vec![0.0f64; w];
                        for ox in 0..wo {
                            let v = tmp[y * wo + ox];
                            for i in 0..k {
                                row[ox + i] += kern[i].as_f64() * v;
                            }
                        }
                        for (d, r) in dst[y * w..(y + 1) * w].iter_mut().zip(row) {
                            *d = T::from_f64(r);
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![b, c, h, w], gx))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(shape: &[usize], data: Vec<f64>) -> Var<f64> {
        Var::constant(Tensor::new(shape, data).unwrap())
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let tape = Tape::<f64>::no_grad();
        let x = var(&[2, 1, 3, 4], (0..24).map(|i| i as f64 * 0.5 - 3.0).collect());
        let w = var(&[1, 1, 1, 1], vec![1.0]);
        let b = var(&[1], vec![0.0]);
        let y = tape.conv2d(&x, &w, Some(&b), ConvSpec::valid()).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn ones_kernel_counts_overlaps() {
        let tape = Tape::<f64>::no_grad();
        let x = var(&[1, 1, 4, 4], vec![1.0; 16]);
        let w = var(&[1, 1, 3, 3], vec![1.0; 9]);
        let y = tape.conv2d(&x, &w, None, ConvSpec::same(3)).unwrap();
        let d = y.value().data();
        assert_eq!(d[0], 4.0);
        assert_eq!(d[3], 4.0);
        assert_eq!(d[1], 6.0);
        assert_eq!(d[4], 6.0);
        assert_eq!(d[5], 9.0);
        assert_eq!(d[10], 9.0);
    }

    #[test]
    fn output_size_follows_stride_and_padding() {
        let tape = Tape::<f64>::no_grad();
        let x = var(&[1, 2, 7, 6], vec![0.5; 84]);
        let w = var(&[3, 2, 3, 3], vec![0.1; 54]);
        let spec = ConvSpec {
            stride: 2,
            padding: 1,
        };
        let y = tape.conv2d(&x, &w, None, spec).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 3]);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let tape = Tape::<f64>::no_grad();
        let x = var(&[1, 2, 4, 4], vec![0.0; 32]);
        let w = var(&[1, 3, 3, 3], vec![0.0; 27]);
        assert!(matches!(
            tape.conv2d(&x, &w, None, ConvSpec::same(3)),
            Err(Error::Shape(_))
        ));
        let w = var(&[1, 2, 2, 2], vec![0.0; 8]);
        assert!(tape.conv2d(&x, &w, None, ConvSpec::valid()).is_err());
    }

    #[test]
    fn separable_filter_of_box_kernel_averages() {
        let tape = Tape::<f64>::no_grad();
        let x = var(&[1, 1, 3, 3], (1..=9).map(f64::from).collect());
        let y = tape.separable_filter_valid(&x, &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert!((y.value().item() - 5.0).abs() < 1e-12);
    }
}
