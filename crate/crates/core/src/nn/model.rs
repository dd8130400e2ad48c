//! Forward pass of the fusion autoencoder.
//!
//! Encoder: 3x3 conv + ReLU, three multi-kernel blocks, the parallel
//! spatial/channel attention block, and a residual 3x3 conv on the last
//! multi-kernel output; the residual path and the attention output are
//! concatenated into `48 c0` feature channels. Decoder: four 3x3 conv + BN +
//! PReLU layers and a final 3x3 conv + tanh.

use indexmap::IndexMap;

use super::{ArchConfig, ModelParams};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::tensor::{BatchNormStats, ConvSpec, NormMode, Real, Tape, Tensor, Var};

/// Parameters bound to a tape for one forward (and possibly backward) pass.
#[derive(Clone)]
pub struct Network<T: Real = f32> {
    arch: ArchConfig,
    vars: IndexMap<String, Var<T>>,
    running: IndexMap<usize, BatchNormStats<T>>,
    mode: NormMode,
}

impl<T: Real> Network<T> {
    /// Registers every trainable parameter as a leaf of `tape`.
    pub fn bind(params: &ModelParams<T>, tape: &Tape<T>, mode: NormMode) -> Self {
        Self::build(params, mode, |t| tape.leaf(t))
    }

    /// Binds parameters as constants (inference, no gradients).
    pub fn frozen(params: &ModelParams<T>, mode: NormMode) -> Self {
        Self::build(params, mode, Var::constant)
    }

    fn build(params: &ModelParams<T>, mode: NormMode, mut wrap: impl FnMut(Tensor<T>) -> Var<T>) -> Self {
        let mut vars = IndexMap::new();
        let mut running = IndexMap::new();
        for (name, t) in params.iter() {
            if ModelParams::<T>::is_trainable(name) {
                vars.insert(name.to_string(), wrap(t.clone()));
            }
        }
        for layer in 1..=4 {
            let get = |s: &str| params.get(&format!("dec.bn{layer}.{s}")).cloned();
            if let (Ok(mean), Ok(var)) = (get("running_mean"), get("running_var")) {
                running.insert(layer, BatchNormStats { mean, var });
            }
        }
        Self {
            arch: params.arch,
            vars,
            running,
            mode,
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn var(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    /// Trainable parameters in declaration order.
    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var<T>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Writes batch-norm running statistics gathered in train mode back into `params`.
    pub fn commit_running_stats(&self, params: &mut ModelParams<T>) -> Result<()> {
        for (layer, stats) in &self.running {
            params.set(&format!("dec.bn{layer}.running_mean"), stats.mean.clone())?;
            params.set(&format!("dec.bn{layer}.running_var"), stats.var.clone())?;
        }
        Ok(())
    }

    fn conv(&self, tape: &Tape<T>, x: &Var<T>, prefix: &str, spec: ConvSpec) -> Result<Var<T>> {
        let w = self.var(&format!("{prefix}.w"))?;
        let b = self.var(&format!("{prefix}.b"))?;
        tape.conv2d(x, w, Some(b), spec)
    }

    /// Multi-kernel block `block` (1-based): parallel 3x3, 5x5 and 7x7 convs,
    /// each followed by PReLU, concatenated in that order.
    pub fn mkblock_forward(&self, tape: &Tape<T>, x: &Var<T>, block: usize) -> Result<Var<T>> {
        if !(1..=3).contains(&block) {
            return Err(Error::Config(format!("no multi-kernel block {block}")));
        }
        let [_, cin, _, _] = x.value().dims4()?;
        let expected = self.arch.block_input(block);
        if cin != expected {
            return Err(Error::Config(format!(
                "multi-kernel block {block} expects {expected} input channels, got {cin}"
            )));
        }
        let mut branches = Vec::with_capacity(3);
        for k in [3, 5, 7] {
            let y = self.conv(tape, x, &format!("enc.mk{block}.conv{k}"), ConvSpec::same(k))?;
            let a = self.var(&format!("enc.mk{block}.prelu{k}"))?;
            branches.push(tape.prelu(&y, a)?);
        }
        tape.concat_channels(&branches.iter().collect::<Vec<_>>())
    }

    /// Spatial attention map `[B, 1, H, W]` in (0, 1).
    pub fn spatial_attention(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let max = tape.max_pool_spatial(x)?;
        let avg = tape.avg_pool_spatial(x)?;
        let stacked = tape.concat_channels(&[&max, &avg])?;
        let logits = self.conv(tape, &stacked, "enc.psc.sa", ConvSpec::same(3))?;
        Ok(tape.sigmoid(&logits))
    }

    /// Channel attention weights `[B, C, 1, 1]` in (0, 1).
    pub fn channel_attention(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let [_, c, _, _] = x.value().dims4()?;
        if c % self.arch.ca_reduction != 0 {
            return Err(Error::Config(format!(
                "channel attention: {c} channels not divisible by reduction {}",
                self.arch.ca_reduction
            )));
        }
        let mlp = |pooled: &Var<T>| -> Result<Var<T>> {
            let h = self.conv(tape, pooled, "enc.psc.ca.fc1", ConvSpec::valid())?;
            let h = tape.relu(&h);
            self.conv(tape, &h, "enc.psc.ca.fc2", ConvSpec::valid())
        };
        let from_max = mlp(&tape.global_max_pool(x)?)?;
        let from_avg = mlp(&tape.global_avg_pool(x)?)?;
        let logits = tape.add(&from_max, &from_avg)?;
        Ok(tape.sigmoid(&logits))
    }

    /// Parallel attention: both gates read the same input, outputs are averaged.
    pub fn pscnet_forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let channel = self.channel_attention(tape, x)?;
        let spatial = self.spatial_attention(tape, x)?;
        pscnet_merge(tape, x, &channel, &spatial)
    }

    /// `[B, 1, H, W]` image to `[B, 48 c0, H, W]` features.
    pub fn encoder_forward(&self, tape: &Tape<T>, img: &Var<T>) -> Result<Var<T>> {
        let [_, c, _, _] = img.value().dims4()?;
        if c != 1 {
            return Err(Error::shape(format!("encoder expects 1 channel, got {c}")));
        }
        let x = self.conv(tape, img, "enc.init", ConvSpec::same(3))?;
        let mut x = tape.relu(&x);
        for block in 1..=3 {
            x = self.mkblock_forward(tape, &x, block)?;
        }
        let attended = if self.arch.attention {
            self.pscnet_forward(tape, &x)?
        } else {
            x.clone()
        };
        let residual = self.conv(tape, &x, "enc.res", ConvSpec::same(3))?;
        tape.concat_channels(&[&residual, &attended])
    }

    /// `[B, 48 c0, H, W]` features to a `[B, 1, H, W]` image in (-1, 1).
    ///
    /// In train mode the batch-norm running statistics held by `self` are updated.
    pub fn decoder_forward(&mut self, tape: &Tape<T>, features: &Var<T>) -> Result<Var<T>> {
        let [_, c, _, _] = features.value().dims4()?;
        let expected = self.arch.feature_channels();
        if c != expected {
            return Err(Error::shape(format!(
                "decoder expects {expected} channels, got {c}"
            )));
        }
        let mut x = features.clone();
        for layer in 1..=4 {
            let y = self.conv(tape, &x, &format!("dec.conv{layer}"), ConvSpec::same(3))?;
            let stats = self
                .running
                .get(&layer)
                .ok_or_else(|| Error::Config(format!("missing running stats for layer {layer}")))?;
            let (y, updated) = tape.batch_norm(
                &y,
                self.var(&format!("dec.bn{layer}.gamma"))?,
                self.var(&format!("dec.bn{layer}.beta"))?,
                stats,
                self.mode,
            )?;
            if let Some(updated) = updated {
                self.running.insert(layer, updated);
            }
            x = tape.prelu(&y, self.var(&format!("dec.prelu{layer}"))?)?;
        }
        let y = self.conv(tape, &x, "dec.conv5", ConvSpec::same(3))?;
        Ok(tape.tanh(&y))
    }

    /// Training path: reconstruct `img` through encoder and decoder.
    pub fn autoencode(&mut self, tape: &Tape<T>, img: &Var<T>) -> Result<Var<T>> {
        let f = self.encoder_forward(tape, img)?;
        self.decoder_forward(tape, &f)
    }

    /// Inference path: encode both sources, fuse features, decode.
    pub fn fuse(
        &mut self,
        tape: &Tape<T>,
        ir: &Var<T>,
        vis: &Var<T>,
        strategy: FusionStrategy,
    ) -> Result<Var<T>> {
        if ir.shape() != vis.shape() {
            return Err(Error::Input(format!(
                "infrared {:?} and visible {:?} shapes differ",
                ir.shape(),
                vis.shape()
            )));
        }
        let f_ir = self.encoder_forward(tape, ir)?;
        let f_vis = self.encoder_forward(tape, vis)?;
        let fused = strategy.apply(f_ir.value(), f_vis.value())?;
        self.decoder_forward(tape, &Var::constant(fused))
    }
}

/// `0.5 * (x * channel + x * spatial)` with the gates broadcast over `x`.
pub fn pscnet_merge<T: Real>(
    tape: &Tape<T>,
    x: &Var<T>,
    channel: &Var<T>,
    spatial: &Var<T>,
) -> Result<Var<T>> {
    let by_channel = tape.mul(x, channel)?;
    let by_space = tape.mul(x, spatial)?;
    let sum = tape.add(&by_channel, &by_space)?;
    Ok(tape.scale(&sum, T::from_f64(0.5)))
}

/// Eval-mode reconstruction of `img: [B, 1, H, W]`.
pub fn autoencode<T: Real>(img: &Tensor<T>, params: &ModelParams<T>) -> Result<Tensor<T>> {
    let tape = Tape::no_grad();
    let mut net = Network::frozen(params, NormMode::Eval);
    let out = net.autoencode(&tape, &Var::constant(img.clone()))?;
    out.value().check_finite("autoencode output")?;
    Ok(out.into_value())
}

/// Eval-mode fusion of a registered infrared/visible pair.
pub fn fuse_forward<T: Real>(
    ir: &Tensor<T>,
    vis: &Tensor<T>,
    params: &ModelParams<T>,
    strategy: FusionStrategy,
) -> Result<Tensor<T>> {
    let tape = Tape::no_grad();
    let mut net = Network::frozen(params, NormMode::Eval);
    let out = net.fuse(
        &tape,
        &Var::constant(ir.clone()),
        &Var::constant(vis.clone()),
        strategy,
    )?;
    out.value().check_finite("fused output")?;
    Ok(out.into_value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionKind;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn tiny() -> ArchConfig {
        ArchConfig {
            base_channels: 2,
            ca_reduction: 4,
            image_side: 8,
            attention: true,
        }
    }

    #[test]
    fn mkblock_shapes() {
        let p = ModelParams::<f32>::init(ArchConfig::paper(), 0).unwrap();
        let net = Network::frozen(&p, NormMode::Eval);
        let tape = Tape::no_grad();
        let x = Var::constant(Tensor::zeros(&[1, 16, 6, 6]));
        let y = net.mkblock_forward(&tape, &x, 1).unwrap();
        assert_eq!(y.shape(), [1, 96, 6, 6]);

        let p = ModelParams::<f32>::init(ArchConfig::toy(), 0).unwrap();
        let net = Network::frozen(&p, NormMode::Eval);
        let x = Var::constant(Tensor::zeros(&[1, 48, 16, 16]));
        assert_eq!(net.mkblock_forward(&tape, &x, 3).unwrap().shape(), [1, 96, 16, 16]);
        assert!(matches!(net.mkblock_forward(&tape, &x, 2), Err(Error::Config(_))));
    }

    #[test]
    fn zero_input_zero_bias_mkblock_is_zero() {
        let p = ModelParams::<f32>::init(ArchConfig::toy(), 3).unwrap();
        let net = Network::frozen(&p, NormMode::Eval);
        let tape = Tape::no_grad();
        let y = net
            .mkblock_forward(&tape, &Var::constant(Tensor::zeros(&[1, 4, 5, 5])), 1)
            .unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_ranges_and_constant_input() {
        let p = ModelParams::<f64>::init(tiny(), 5).unwrap();
        let net = Network::frozen(&p, NormMode::Eval);
        let tape = Tape::no_grad();
        let x = Var::constant(random(&[2, 48, 6, 6], 1));
        for m in [net.spatial_attention(&tape, &x).unwrap(), net.channel_attention(&tape, &x).unwrap()] {
            assert!(m.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        // interior of a constant field sees identical windows
        let c = Var::constant(Tensor::full(&[1, 48, 6, 6], 0.3));
        let sa = net.spatial_attention(&tape, &c).unwrap();
        let d = sa.value().data();
        for y in 1..5 {
            for x in 1..5 {
                assert_eq!(d[y * 6 + x], d[6 + 1]);
            }
        }
    }

    #[test]
    fn zero_bottleneck_gives_half() {
        let mut p = ModelParams::<f64>::init(tiny(), 5).unwrap();
        for name in ["enc.psc.ca.fc1.w", "enc.psc.ca.fc2.w"] {
            let shape = p.get(name).unwrap().shape().to_vec();
            p.set(name, Tensor::zeros(&shape)).unwrap();
        }
        let net = Network::frozen(&p, NormMode::Eval);
        let tape = Tape::no_grad();
        let ca = net
            .channel_attention(&tape, &Var::constant(random(&[1, 48, 4, 4], 2)))
            .unwrap();
        assert!(ca.value().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn channel_reduction_must_divide() {
        let p = ModelParams::<f64>::init(tiny(), 0).unwrap();
        let net = Network::frozen(&p, NormMode::Eval);
        let tape = Tape::no_grad();
        let x = Var::constant(Tensor::zeros(&[1, 6, 3, 3]));
        assert!(matches!(net.channel_attention(&tape, &x), Err(Error::Config(_))));
    }

    #[test]
    fn pscnet_is_the_average_of_two_gates() {
        let p = ModelParams::<f64>::init(tiny(), 8).unwrap();
        let net = Network::frozen(&p, NormMode::Eval);
        let tape = Tape::no_grad();
        let x = Var::constant(random(&[2, 48, 5, 5], 4));
        let y = net.pscnet_forward(&tape, &x).unwrap();
        // evaluate the gates in the opposite order
        let ms = net.spatial_attention(&tape, &x).unwrap();
        let mc = net.channel_attention(&tape, &x).unwrap();
        let [b, c, h, w] = x.value().dims4().unwrap();
        let oracle = Tensor::from_fn(&[b, c, h, w], |i| {
            let (bi, ci, p) = (i / (c * h * w), (i / (h * w)) % c, i % (h * w));
            let xv = x.value().data()[i];
            0.5 * (xv * mc.value().data()[bi * c + ci] + xv * ms.value().data()[bi * h * w + p])
        });
        assert!(y.value().max_abs_diff(&oracle) < 1e-12);

        let ones_c = Var::constant(Tensor::ones(&[2, 48, 1, 1]));
        let ones_s = Var::constant(Tensor::ones(&[2, 1, 5, 5]));
        assert_eq!(pscnet_merge(&tape, &x, &ones_c, &ones_s).unwrap().value(), x.value());
        let zero = Var::constant(Tensor::zeros(&[2, 48, 5, 5]));
        assert!(net.pscnet_forward(&tape, &zero).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_decoder_shapes() {
        let p = ModelParams::<f32>::init(ArchConfig::toy(), 1).unwrap();
        let mut net = Network::frozen(&p, NormMode::Eval);
        let tape = Tape::no_grad();
        let img = Var::constant(random(&[2, 1, 12, 10], 3).cast());
        let f = net.encoder_forward(&tape, &img).unwrap();
        assert_eq!(f.shape(), [2, 192, 12, 10]);
        let out = net.decoder_forward(&tape, &f).unwrap();
        assert_eq!(out.shape(), [2, 1, 12, 10]);
        assert!(out.value().data().iter().all(|&v| v > -1.0 && v < 1.0));
        assert!(net.decoder_forward(&tape, &img).is_err());
    }

    #[test]
    fn full_size_encoder_width() {
        let p = ModelParams::<f32>::init(ArchConfig::paper(), 1).unwrap();
        let net = Network::frozen(&p, NormMode::Eval);
        let tape = Tape::no_grad();
        let img = Var::constant(Tensor::zeros(&[1, 1, 4, 4]));
        assert_eq!(net.encoder_forward(&tape, &img).unwrap().shape(), [1, 768, 4, 4]);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let p = ModelParams::<f32>::init(ArchConfig::toy(), 11).unwrap();
        let img: Tensor<f32> = random(&[1, 1, 16, 16], 7).cast();
        assert_eq!(autoencode(&img, &p).unwrap(), autoencode(&img, &p).unwrap());
    }

    #[test]
    fn average_fusion_of_identical_inputs_is_reconstruction() {
        let p = ModelParams::<f32>::init(ArchConfig::toy(), 2).unwrap();
        let img: Tensor<f32> = random(&[1, 1, 12, 12], 9).cast();
        let fused = fuse_forward(&img, &img, &p, FusionKind::WeightedAverage.into()).unwrap();
        assert_eq!(fused, autoencode(&img, &p).unwrap());
        let other: Tensor<f32> = Tensor::zeros(&[1, 1, 12, 11]);
        assert!(matches!(
            fuse_forward(&img, &other, &p, FusionStrategy::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let p = ModelParams::<f64>::init(tiny(), 4).unwrap();
        let tape = Tape::new();
        let mut net = Network::bind(&p, &tape, NormMode::Train);
        let img = Var::constant(random(&[2, 1, 6, 6], 5));
        let out = net.autoencode(&tape, &img).unwrap();
        let diff = tape.sub(&out, &img).unwrap();
        let loss = tape.mean(&tape.square(&diff));
        let grads = tape.backward(&loss).unwrap();
        for (name, v) in net.vars() {
            let g = grads.get_or_zeros(v);
            assert!(g.data().iter().any(|&x| x != 0.0), "{name} has zero gradient");
        }
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut p = ModelParams::<f64>::init(tiny(), 4).unwrap();
        let before = p.clone();
        let tape = Tape::no_grad();
        let mut net = Network::frozen(&p, NormMode::Train);
        net.autoencode(&tape, &Var::constant(random(&[2, 1, 6, 6], 1))).unwrap();
        net.commit_running_stats(&mut p).unwrap();
        assert_ne!(p.get("dec.bn1.running_mean").unwrap(), before.get("dec.bn1.running_mean").unwrap());
        assert_eq!(p.get("dec.conv1.w").unwrap(), before.get("dec.conv1.w").unwrap());
    }
}
