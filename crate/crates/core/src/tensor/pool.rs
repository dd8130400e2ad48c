//! Pooling ops used by the attention branches and the multi-scale losses.

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Real> Tape<T> {
    /// Max over channels: `[B, C, H, W] -> [B, 1, H, W]`.
    pub fn max_pool_spatial(&self, x: &Var<T>) -> Result<Var<T>> {
        let [b, c, h, w] = x.value().dims4()?;
        let plane = h * w;
        let xd = x.value().data();
        let mut out = Vec::with_capacity(b * plane);
        let mut arg = Vec::with_capacity(b * plane);
        for bi in 0..b {
            for p in 0..plane {
                let mut best = bi * c * plane + p;
                for ci in 1..c {
                    let j = (bi * c + ci) * plane + p;
                    if xd[j] > xd[best] {
                        best = j;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
        Ok(self.route_back(x, Tensor::from_parts(vec![b, 1, h, w], out), arg))
    }

    /// Mean over channels: `[B, C, H, W] -> [B, 1, H, W]`.
    pub fn avg_pool_spatial(&self, x: &Var<T>) -> Result<Var<T>> {
        let [b, c, h, w] = x.value().dims4()?;
        let plane = h * w;
        let xd = x.value().data();
        let inv = 1.0 / c as f64;
        let mut out = Vec::with_capacity(b * plane);
        for bi in 0..b {
            for p in 0..plane {
                let s: f64 = (0..c).map(|ci| xd[(bi * c + ci) * plane + p].as_f64()).sum();
                out.push(T::from_f64(s * inv));
            }
        }
        let value = Tensor::from_parts(vec![b, 1, h, w], out);
        Ok(self.record(
            value,
            &[x],
            Box::new(move |g, _| {
                let gd = g.data();
                let k = T::from_f64(inv);
                let mut gx = vec![T::zero(); b * c * plane];
                for bi in 0..b {
                    for ci in 0..c {
                        for p in 0..plane {
                            gx[(bi * c + ci) * plane + p] = gd[bi * plane + p] * k;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![b, c, h, w], gx))]
            }),
        ))
    }

    /// Max over each spatial plane: `[B, C, H, W] -> [B, C, 1, 1]`.
    pub fn global_max_pool(&self, x: &Var<T>) -> Result<Var<T>> {
        let [b, c, h, w] = x.value().dims4()?;
        let plane = h * w;
        let xd = x.value().data();
        let mut out = Vec::with_capacity(b * c);
        let mut arg = Vec::with_capacity(b * c);
        for p in 0..b * c {
            let base = p * plane;
            let mut best = base;
            for j in base + 1..base + plane {
                if xd[j] > xd[best] {
                    best = j;
                }
            }
            out.push(xd[best]);
            arg.push(best);
        }
        Ok(self.route_back(x, Tensor::from_parts(vec![b, c, 1, 1], out), arg))
    }

    /// Mean over each spatial plane: `[B, C, H, W] -> [B, C, 1, 1]`.
    pub fn global_avg_pool(&self, x: &Var<T>) -> Result<Var<T>> {
        let [b, c, h, w] = x.value().dims4()?;
        let plane = h * w;
        let xd = x.value().data();
        let inv = 1.0 / plane as f64;
        let out = (0..b * c)
            .map(|p| {
                let s: f64 = xd[p * plane..(p + 1) * plane].iter().map(|v| v.as_f64()).sum();
                T::from_f64(s * inv)
            })
            .collect();
        let value = Tensor::from_parts(vec![b, c, 1, 1], out);
        Ok(self.record(
            value,
            &[x],
            Box::new(move |g, _| {
                let k = T::from_f64(inv);
                let gx = (0..b * c * plane).map(|j| g.data()[j / plane] * k).collect();
                vec![Some(Tensor::from_parts(vec![b, c, h, w], gx))]
            }),
        ))
    }

    /// 2x2 mean pooling with stride 2; `H` and `W` must be even.
    pub fn avg_pool_2x2(&self, x: &Var<T>) -> Result<Var<T>> {
        let [b, c, h, w] = x.value().dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "avg_pool_2x2 needs even spatial dims, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xd = x.value().data();
        let quarter = T::from_f64(0.25);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        for p in 0..b * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = 2 * oy * w + 2 * ox;
                    out.push((src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter);
                }
            }
        }
        let value = Tensor::from_parts(vec![b, c, ho, wo], out);
        Ok(self.record(
            value,
            &[x],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = vec![T::zero(); b * c * h * w];
                for p in 0..b * c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[p * h * w + y * w + xx] =
                                gd[p * ho * wo + (y / 2) * wo + xx / 2] * quarter;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![b, c, h, w], gx))]
            }),
        ))
    }

    /// Keeps the top-left `h x w` corner of every plane.
    pub fn crop_top_left(&self, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let [b, c, hi, wi] = x.value().dims4()?;
        if h == 0 || w == 0 || h > hi || w > wi {
            return Err(Error::shape(format!("cannot crop {hi}x{wi} to {h}x{w}")));
        }
        if (h, w) == (hi, wi) {
            return Ok(x.clone());
        }
        let arg: Vec<usize> = (0..b * c)
            .flat_map(|p| (0..h).flat_map(move |y| (0..w).map(move |xx| p * hi * wi + y * wi + xx)))
            .collect();
        let xd = x.value().data();
        let value = Tensor::from_parts(vec![b, c, h, w], arg.iter().map(|&j| xd[j]).collect());
        Ok(self.route_back(x, value, arg))
    }

    /// Records a selection op: output element `i` is input element `arg[i]`.
    fn route_back(&self, x: &Var<T>, value: Tensor<T>, arg: Vec<usize>) -> Var<T> {
        let in_shape = x.shape().to_vec();
        let n = x.value().numel();
        self.record(
            value,
            &[x],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); n];
                for (&j, &gv) in arg.iter().zip(g.data()) {
                    gx[j] = gx[j] + gv;
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), gx))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_pools_to_constant() {
        let tape = Tape::<f64>::no_grad();
        let x = Var::constant(Tensor::full(&[2, 3, 4, 4], 1.5));
        for y in [
            tape.max_pool_spatial(&x).unwrap(),
            tape.avg_pool_spatial(&x).unwrap(),
            tape.global_max_pool(&x).unwrap(),
            tape.global_avg_pool(&x).unwrap(),
            tape.avg_pool_2x2(&x).unwrap(),
        ] {
            assert!(y.value().data().iter().all(|&v| v == 1.5));
        }
    }

    #[test]
    fn channel_pools_of_two_channels() {
        let tape = Tape::<f64>::no_grad();
        let x = Var::constant(Tensor::new(&[1, 2, 1, 1], vec![1.0, 3.0]).unwrap());
        assert_eq!(tape.max_pool_spatial(&x).unwrap().value().item(), 3.0);
        assert_eq!(tape.avg_pool_spatial(&x).unwrap().value().item(), 2.0);
    }

    #[test]
    fn odd_dims_rejected_by_2x2_pool() {
        let tape = Tape::<f64>::no_grad();
        let x = Var::constant(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(tape.avg_pool_2x2(&x), Err(Error::Shape(_))));
    }
}
