//! Differentiable training objectives.
//!
//! Every loss takes the reconstruction `o` and the target `i` as `[B, C, H, W]`
//! variables on a tape and returns a scalar variable.

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Real, Tape, Tensor, Var};

/// Weights of the four terms in the total loss and the MS-SSIM/L1 mix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 2.0,
            alpha4: 0.005,
            beta: 0.0025,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }
}

/// Windowed SSIM settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    /// Gaussian window side.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the data.
    pub dynamic_range: f64,
    /// Number of MS-SSIM scales `M`.
    pub scales: usize,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl SsimConfig {
    /// Three scales, for 64 pixel crops.
    pub fn toy() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 2.0,
            scales: 3,
        }
    }

    /// Five scales, for 224 pixel crops.
    pub fn full() -> Self {
        Self {
            scales: 5,
            ..Self::toy()
        }
    }

    pub fn with_range(mut self, dynamic_range: f64) -> Self {
        self.dynamic_range = dynamic_range;
        self
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Smallest image side for which every MS-SSIM scale still fits the window.
    pub fn min_side(&self) -> usize {
        self.window << (self.scales.max(1) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config(format!("ssim window must be odd, got {}", self.window)));
        }
        if !(self.sigma > 0.0) || !(self.dynamic_range > 0.0) {
            return Err(Error::Config("ssim sigma and dynamic range must be positive".into()));
        }
        if self.scales == 0 {
            return Err(Error::Config("ms-ssim needs at least one scale".into()));
        }
        Ok(())
    }

    /// Normalized 1-d Gaussian; the 2-d window is its outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

fn same_shape<T: Real>(o: &Var<T>, i: &Var<T>) -> Result<()> {
    o.value().expect_same_shape(i.value())?;
    o.value().dims4().map(|_| ())
}

/// `||o - i||_2 / numel`, the norm itself rather than its square.
pub fn loss_pixel<T: Real>(tape: &Tape<T>, o: &Var<T>, i: &Var<T>) -> Result<Var<T>> {
    same_shape(o, i)?;
    let n = o.value().numel() as f64;
    let d = tape.sub(o, i)?;
    Ok(tape.scale(&tape.l2_norm(&d), T::from_f64(1.0 / n)))
}

/// Per-window luminance and contrast-structure maps, each `[B, C, H-w+1, W-w+1]`.
pub fn ssim_maps<T: Real>(
    tape: &Tape<T>,
    o: &Var<T>,
    i: &Var<T>,
    cfg: &SsimConfig,
) -> Result<(Var<T>, Var<T>)> {
    same_shape(o, i)?;
    cfg.validate()?;
    let [_, _, h, w] = o.value().dims4()?;
    if h < cfg.window || w < cfg.window {
        return Err(Error::shape(format!(
            "ssim needs images of at least {0}x{0}, got {h}x{w}",
            cfg.window
        )));
    }
    let kernel: Vec<T> = cfg.kernel().into_iter().map(T::from_f64).collect();
    let filt = |x: &Var<T>| tape.separable_filter_valid(x, &kernel);
    let mu_o = filt(o)?;
    let mu_i = filt(i)?;
    let mu_oo = tape.square(&mu_o);
    let mu_ii = tape.square(&mu_i);
    let mu_oi = tape.mul(&mu_o, &mu_i)?;
    let var_o = tape.sub(&filt(&tape.square(o))?, &mu_oo)?;
    let var_i = tape.sub(&filt(&tape.square(i))?, &mu_ii)?;
    let cov = tape.sub(&filt(&tape.mul(o, i)?)?, &mu_oi)?;

    let (c1, c2) = (T::from_f64(cfg.c1()), T::from_f64(cfg.c2()));
    let two = T::from_f64(2.0);
    let l_num = tape.add_scalar(&tape.scale(&mu_oi, two), c1);
    let l_den = tape.add_scalar(&tape.add(&mu_oo, &mu_ii)?, c1);
    let cs_num = tape.add_scalar(&tape.scale(&cov, two), c2);
    let cs_den = tape.add_scalar(&tape.add(&var_o, &var_i)?, c2);
    Ok((tape.div(&l_num, &l_den)?, tape.div(&cs_num, &cs_den)?))
}

/// Mean windowed SSIM over all valid window positions and images.
pub fn ssim<T: Real>(tape: &Tape<T>, o: &Var<T>, i: &Var<T>, cfg: &SsimConfig) -> Result<Var<T>> {
    let (l, cs) = ssim_maps(tape, o, i, cfg)?;
    Ok(tape.mean(&tape.mul(&l, &cs)?))
}

pub fn loss_ssim<T: Real>(tape: &Tape<T>, o: &Var<T>, i: &Var<T>, cfg: &SsimConfig) -> Result<Var<T>> {
    let s = ssim(tape, o, i, cfg)?;
    Ok(tape.add_scalar(&tape.neg(&s), T::one()))
}

/// `1 - l_M * prod_j cs_j` for one plane `[1, 1, H, W]`.
///
/// `cs_j` is the mean contrast-structure map at scale `j < M`; the coarsest scale
/// contributes the mean of `l * cs`, so a single scale reduces to `1 - SSIM`.
fn msssim_plane<T: Real>(tape: &Tape<T>, o: &Var<T>, i: &Var<T>, cfg: &SsimConfig) -> Result<Var<T>> {
    let (mut o, mut i) = (o.clone(), i.clone());
    let mut product: Option<Var<T>> = None;
    for scale in 1..=cfg.scales {
        let (l, cs) = ssim_maps(tape, &o, &i, cfg)?;
        let term = if scale == cfg.scales {
            tape.mean(&tape.mul(&l, &cs)?)
        } else {
            tape.mean(&cs)
        };
        product = Some(match product {
            None => term,
            Some(p) => tape.mul(&p, &term)?,
        });
        if scale < cfg.scales {
            let [_, _, h, w] = o.value().dims4()?;
            let (he, we) = (h & !1, w & !1);
            o = tape.avg_pool_2x2(&tape.crop_top_left(&o, he, we)?)?;
            i = tape.avg_pool_2x2(&tape.crop_top_left(&i, he, we)?)?;
        }
    }
    let p = product.expect("at least one scale");
    Ok(tape.add_scalar(&tape.neg(&p), T::one()))
}

/// MS-SSIM loss averaged over the `B x C` planes.
pub fn loss_msssim<T: Real>(tape: &Tape<T>, o: &Var<T>, i: &Var<T>, cfg: &SsimConfig) -> Result<Var<T>> {
    same_shape(o, i)?;
    cfg.validate()?;
    let [b, c, h, w] = o.value().dims4()?;
    let min = cfg.min_side();
    if h < min || w < min {
        return Err(Error::shape(format!(
            "ms-ssim with {} scales needs images of at least {min}x{min}, got {h}x{w}",
            cfg.scales
        )));
    }
    let planes = b * c;
    let (o, i) = (tape.reshape(o, &[1, planes, h, w])?, tape.reshape(i, &[1, planes, h, w])?);
    let mut total: Option<Var<T>> = None;
    for p in 0..planes {
        let lp = msssim_plane(tape, &tape.narrow_channels(&o, p, 1)?, &tape.narrow_channels(&i, p, 1)?, cfg)?;
        total = Some(match total {
            None => lp,
            Some(t) => tape.add(&t, &lp)?,
        });
    }
    Ok(tape.scale(&total.expect("nonempty batch"), T::from_f64(1.0 / planes as f64)))
}

/// `||o - i||_1 / (H W)` per image, averaged over the batch.
pub fn loss_l1<T: Real>(tape: &Tape<T>, o: &Var<T>, i: &Var<T>) -> Result<Var<T>> {
    same_shape(o, i)?;
    let [b, _, h, w] = o.value().dims4()?;
    let d = tape.abs(&tape.sub(o, i)?);
    Ok(tape.scale(&tape.sum(&d), T::from_f64(1.0 / (b * h * w) as f64)))
}

/// `(1 - beta) L_msssim + beta L_l1`.
pub fn combine_msssim_l1<T: Real>(
    tape: &Tape<T>,
    o: &Var<T>,
    i: &Var<T>,
    beta: f64,
    cfg: &SsimConfig,
) -> Result<Var<T>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0, 1], got {beta}")));
    }
    let ms = loss_msssim(tape, o, i, cfg)?;
    let l1 = loss_l1(tape, o, i)?;
    tape.add(&tape.scale(&ms, T::from_f64(1.0 - beta)), &tape.scale(&l1, T::from_f64(beta)))
}

/// Horizontal and vertical Sobel kernels as a `[2, 1, 3, 3]` weight.
pub fn sobel_kernels<T: Real>() -> Tensor<T> {
    const K: [f64; 18] = [
        -1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0, //
        -1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0,
    ];
    Tensor::from_fn(&[2, 1, 3, 3], |j| T::from_f64(K[j]))
}

/// Mean absolute difference of the stacked Sobel responses (valid positions only).
pub fn loss_grad<T: Real>(tape: &Tape<T>, o: &Var<T>, i: &Var<T>) -> Result<Var<T>> {
    same_shape(o, i)?;
    let [b, c, h, w] = o.value().dims4()?;
    if h < 3 || w < 3 {
        return Err(Error::shape(format!("gradient loss needs at least 3x3, got {h}x{w}")));
    }
    let k = Var::constant(sobel_kernels());
    let d = tape.sub(o, i)?;
    let d = tape.reshape(&d, &[b * c, 1, h, w])?;
    // Sobel is linear, so the response of the difference is the difference of responses
    let g = tape.conv2d(&d, &k, None, ConvSpec::valid())?;
    Ok(tape.mean(&tape.abs(&g)))
}

/// The four weighted terms and their sum.
pub struct LossTerms<T: Real> {
    pub pixel: Var<T>,
    pub ssim: Var<T>,
    pub msl1: Var<T>,
    pub grad: Var<T>,
    pub total: Var<T>,
}

impl<T: Real> LossTerms<T> {
    /// `[L_pixel, L_ssim, L_msl1, L_grad, L_total]`.
    pub fn values(&self) -> [f64; 5] {
        [&self.pixel, &self.ssim, &self.msl1, &self.grad, &self.total].map(|v| v.value().item().as_f64())
    }
}

/// `a1 L_pixel + a2 L_ssim + a3 L_msl1 + a4 L_grad`.
pub fn loss_total<T: Real>(
    tape: &Tape<T>,
    o: &Var<T>,
    i: &Var<T>,
    weights: &LossWeights,
    cfg: &SsimConfig,
) -> Result<LossTerms<T>> {
    weights.validate()?;
    let pixel = loss_pixel(tape, o, i)?;
    let ssim = loss_ssim(tape, o, i, cfg)?;
    let msl1 = combine_msssim_l1(tape, o, i, weights.beta, cfg)?;
    let grad = loss_grad(tape, o, i)?;
    let mut total = tape.scale(&pixel, T::from_f64(weights.alpha1));
    for (term, a) in [(&ssim, weights.alpha2), (&msl1, weights.alpha3), (&grad, weights.alpha4)] {
        total = tape.add(&total, &tape.scale(term, T::from_f64(a)))?;
    }
    Ok(LossTerms {
        pixel,
        ssim,
        msl1,
        grad,
        total,
    })
}

/// Windowed SSIM between two `[B, C, H, W]` tensors without recording gradients.
pub fn ssim_value(a: &Tensor<f64>, b: &Tensor<f64>, cfg: &SsimConfig) -> Result<f64> {
    let tape = Tape::no_grad();
    let s = ssim(&tape, &Var::constant(a.clone()), &Var::constant(b.clone()), cfg)?;
    Ok(s.value().item())
}
