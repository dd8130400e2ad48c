use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether batch normalization uses batch statistics or the running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T: Real = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

impl<T: Real> Tape<T> {
    /// Batch normalization over `B x H x W` per channel.
    ///
    /// In train mode the batch statistics normalize the input and the updated
    /// running statistics are returned alongside the output.
    pub fn batch_norm(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        running: &BatchNormStats<T>,
        mode: NormMode,
    ) -> Result<(Var<T>, Option<BatchNormStats<T>>)> {
        let [b, c, h, w] = x.value().dims4()?;
        for (name, t) in [
            ("gamma", gamma.value()),
            ("beta", beta.value()),
            ("running mean", &running.mean),
            ("running var", &running.var),
        ] {
            if t.shape() != [c] {
                return Err(Error::shape(format!(
                    "batch_norm {name} must have shape [{c}], got {:?}",
                    t.shape()
                )));
            }
        }
        let plane = h * w;
        let count = b * plane;
        if mode == NormMode::Train && count < 2 {
            return Err(Error::shape(
                "batch_norm in train mode needs at least two values per channel",
            ));
        }
        let xd = x.value().data();
        let channel_values = |ci: usize| {
            (0..b).flat_map(move |bi| {
                let base = (bi * c + ci) * plane;
                xd[base..base + plane].iter().map(|v| v.as_f64())
            })
        };

        let mut means = vec![0.0f64; c];
        let mut inv_std = vec![0.0f64; c];
        let mut updated = None;
        match mode {
            NormMode::Train => {
                let mut new_mean = Vec::with_capacity(c);
                let mut new_var = Vec::with_capacity(c);
                for ci in 0..c {
                    let mean = channel_values(ci).sum::<f64>() / count as f64;
                    let var = channel_values(ci).map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / count as f64;
                    means[ci] = mean;
                    inv_std[ci] = 1.0 / (var + BN_EPS).sqrt();
                    let unbiased = var * count as f64 / (count - 1) as f64;
                    new_mean.push(T::from_f64(
                        (1.0 - BN_MOMENTUM) * running.mean.data()[ci].as_f64() + BN_MOMENTUM * mean,
                    ));
                    new_var.push(T::from_f64(
                        (1.0 - BN_MOMENTUM) * running.var.data()[ci].as_f64()
                            + BN_MOMENTUM * unbiased,
                    ));
                }
                updated = Some(BatchNormStats {
                    mean: Tensor::from_parts(vec![c], new_mean),
                    var: Tensor::from_parts(vec![c], new_var),
                });
            }
            NormMode::Eval => {
                for ci in 0..c {
                    means[ci] = running.mean.data()[ci].as_f64();
                    inv_std[ci] = 1.0 / (running.var.data()[ci].as_f64() + BN_EPS).sqrt();
                }
            }
        }

        let gd = gamma.value().data();
        let bd = beta.value().data();
        let mut xhat = vec![0.0f64; xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let (g, be) = (gd[ci].as_f64(), bd[ci].as_f64());
                for j in base..base + plane {
                    let n = (xd[j].as_f64() - means[ci]) * inv_std[ci];
                    xhat[j] = n;
                    out[j] = T::from_f64(g * n + be);
                }
            }
        }
        let value = Tensor::from_parts(vec![b, c, h, w], out);
        let gamma_v = gamma.value().clone();
        let var = self.record(
            value,
            &[x, gamma, beta],
            Box::new(move |gout, need| {
                let go = gout.data();
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        for j in base..base + plane {
                            let g = go[j].as_f64();
                            sum_g[ci] += g;
                            sum_gx[ci] += g * xhat[j];
                        }
                    }
                }
                let gx = need[0].then(|| {
                    let gam = gamma_v.data();
                    let mut gx = vec![T::zero(); go.len()];
                    let n = count as f64;
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * plane;
                            let k = gam[ci].as_f64() * inv_std[ci];
                            for j in base..base + plane {
                                let g = go[j].as_f64();
                                gx[j] = T::from_f64(match mode {
                                    NormMode::Train => {
                                        k * (g - sum_g[ci] / n - xhat[j] * sum_gx[ci] / n)
                                    }
                                    NormMode::Eval => k * g,
                                });
                            }
                        }
                    }
                    Tensor::from_parts(vec![b, c, h, w], gx)
                });
                let to_t = |v: &[f64]| {
                    Tensor::from_parts(vec![c], v.iter().map(|&x| T::from_f64(x)).collect())
                };
                vec![gx, need[1].then(|| to_t(&sum_gx)), need[2].then(|| to_t(&sum_g))]
            }),
        );
        Ok((var, updated))
    }
}
