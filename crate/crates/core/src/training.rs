//! Adam training of the autoencoder on reconstruction of single images.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::dataio::ImagePair;
use crate::error::{Error, Result};
use crate::losses::{loss_total, LossWeights, SsimConfig};
use crate::nn::{save_weights, ArchConfig, ModelParams, Network};
use crate::tensor::{NormMode, Real, Tape, Tensor, Var};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
    pub step: u64,
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let names: Vec<String> = params
        .iter()
        .filter(|(n, _)| ModelParams::<T>::is_trainable(n))
        .map(|(n, _)| n.to_string())
        .collect();
    for n in &names {
        let g = grads.get(n).ok_or_else(|| Error::Usage(format!("no gradient for {n}")))?;
        if g.shape() != params.get(n)?.shape() {
            return Err(Error::shape(format!("gradient of {n} has shape {:?}", g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for n in &names {
        let g = &grads[n];
        let p = params.get(n)?;
        let shape = p.shape().to_vec();
        let m = state.m.entry(n.clone()).or_insert_with(|| Tensor::zeros(&shape));
        let v = state.v.entry(n.clone()).or_insert_with(|| Tensor::zeros(&shape));
        let mut next = p.clone();
        let (md, vd, pd) = (m.data_mut(), v.data_mut(), next.data_mut());
        for j in 0..pd.len() {
            let gj = g.data()[j].as_f64();
            let mj = cfg.beta1 * md[j].as_f64() + (1.0 - cfg.beta1) * gj;
            let vj = cfg.beta2 * vd[j].as_f64() + (1.0 - cfg.beta2) * gj * gj;
            md[j] = T::from_f64(mj);
            vd[j] = T::from_f64(vj);
            let step = cfg.learning_rate * (mj / bc1) / ((vj / bc2).sqrt() + cfg.eps);
            pd[j] = T::from_f64(pd[j].as_f64() - step);
        }
        params.set(n, next)?;
    }
    Ok(())
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub ssim: SsimConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Optimizer steps.
    pub iterations: usize,
    /// When set, overrides `iterations` with enough steps to cover this many passes over the samples.
    pub epochs: Option<usize>,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    /// Save every this many steps (0: only at the end).
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        Self {
            arch: ArchConfig::toy(),
            weights: LossWeights::default(),
            ssim: SsimConfig::toy(),
            adam: AdamConfig::default(),
            batch_size: 2,
            iterations: 200,
            epochs: None,
            seed: 0,
            checkpoint: None,
            checkpoint_interval: 0,
        }
    }

    /// Full-size settings: 224 pixel crops, batch 12, 160 steps.
    pub fn paper() -> Self {
        Self {
            arch: ArchConfig::paper(),
            ssim: SsimConfig::full(),
            batch_size: 12,
            iterations: 160,
            ..Self::toy()
        }
    }

    /// `lr == 0` is accepted so that a run can serve as a frozen baseline.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.weights.validate()?;
        self.ssim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.iterations == 0 || self.epochs == Some(0) {
            return Err(Error::Config("iterations and epochs must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate >= 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", a.learning_rate)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        if self.arch.image_side < self.ssim.min_side() {
            return Err(Error::Config(format!(
                "image_side {} is below the {}-scale MS-SSIM minimum {}",
                self.arch.image_side,
                self.ssim.scales,
                self.ssim.min_side()
            )));
        }
        Ok(())
    }

    fn steps(&self, samples: usize) -> usize {
        match self.epochs {
            Some(e) => (e * samples).div_ceil(self.batch_size),
            None => self.iterations,
        }
    }
}

/// Loss terms of one optimizer step, before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub pixel: f64,
    pub ssim: f64,
    pub msl1: f64,
    pub grad: f64,
    pub total: f64,
}

pub const TRACE_HEADER: &str = "iter,L_pixel,L_ssim,L_msl1,L_grad,L_total";

/// CSV text of a loss trace.
pub fn trace_csv(trace: &[LossRecord]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in trace {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e}",
            r.iter, r.pixel, r.ssim, r.msl1, r.grad, r.total
        );
    }
    s
}

pub fn write_trace(trace: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, trace_csv(trace)).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub trace: Vec<LossRecord>,
    pub state: OptimizerState<f32>,
}

/// Seeded sampler that walks a fresh shuffle of the sample indices every epoch.
struct Sampler {
    rng: Xoshiro256PlusPlus,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            // decorrelate from the initialization stream
            rng: Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d),
            order: (0..n).collect(),
            pos: n,
        };
        s.refill();
        s
    }

    fn refill(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.refill();
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn stack(samples: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let [_, _, h, w] = samples[0].dims4()?;
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.shape() != [1, 1, h, w] {
            return Err(Error::Input(format!("training samples differ in shape: {:?}", s.shape())));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(&[samples.len(), 1, h, w], data)
}

/// One forward/backward pass; returns the loss record and gradients by parameter name.
pub fn loss_and_grads(
    params: &mut ModelParams<f32>,
    batch: &Tensor<f32>,
    cfg: &TrainConfig,
    iter: usize,
) -> Result<(LossRecord, IndexMap<String, Tensor<f32>>)> {
    let tape = Tape::new();
    let mut net = Network::bind(params, &tape, NormMode::Train);
    let x = Var::constant(batch.clone());
    let out = net.autoencode(&tape, &x)?;
    let terms = loss_total(&tape, &out, &x, &cfg.weights, &cfg.ssim)?;
    let [pixel, ssim, msl1, grad, total] = terms.values();
    let record = LossRecord { iter, pixel, ssim, msl1, grad, total };
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss at iteration {iter}: L_pixel={pixel} L_ssim={ssim} L_msl1={msl1} L_grad={grad}"
        )));
    }
    let grads = tape.backward(&terms.total)?;
    let mut by_name = IndexMap::new();
    for (name, v) in net.vars() {
        let g = grads.get_or_zeros(v);
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name} at iteration {iter}")));
        }
        by_name.insert(name.to_string(), g);
    }
    net.commit_running_stats(params)?;
    Ok((record, by_name))
}

/// Trains from a seeded initialization. Infrared and visible images are
/// independent reconstruction samples with equal weight.
pub fn train(pairs: &[ImagePair<f32>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = ModelParams::init(cfg.arch, cfg.seed)?;
    train_from(params, pairs, cfg)
}

pub fn train_from(mut params: ModelParams<f32>, pairs: &[ImagePair<f32>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Input("training needs at least one image pair".into()));
    }
    let samples: Vec<&Tensor<f32>> = pairs.iter().flat_map(|p| [&p.ir, &p.vis]).collect();
    let [_, _, h, w] = samples[0].dims4()?;
    let min = cfg.ssim.min_side();
    if h < min || w < min {
        return Err(Error::Input(format!("training images {h}x{w} are smaller than {min}x{min}")));
    }
    let steps = cfg.steps(samples.len());
    let mut sampler = Sampler::new(samples.len(), cfg.seed);
    let mut state = OptimizerState::default();
    let mut trace = Vec::with_capacity(steps);
    for iter in 1..=steps {
        let batch: Vec<&Tensor<f32>> = (0..cfg.batch_size).map(|_| samples[sampler.next()]).collect();
        let batch = stack(&batch)?;
        let (record, grads) = loss_and_grads(&mut params, &batch, cfg, iter)?;
        log::info!("iter {iter}/{steps} L_total {:.6}", record.total);
        trace.push(record);
        adam_step(&mut params, &grads, &mut state, &cfg.adam)?;
        if let Some(path) = &cfg.checkpoint {
            if (cfg.checkpoint_interval > 0 && iter % cfg.checkpoint_interval == 0) || iter == steps {
                save_weights(&params, path)?;
            }
        }
    }
    Ok(TrainOutcome { params, trace, state })
}
