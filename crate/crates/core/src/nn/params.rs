use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::ArchConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Slope every PReLU starts from.
pub const PRELU_INIT: f64 = 0.25;

/// How a named parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `±sqrt(6 / fan_in)`, i.e. standard deviation `sqrt(2 / fan_in)`.
    KaimingUniform { fan_in: usize },
    Constant(f64),
}

/// One entry of the closed parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Batch-norm running statistics are state, not trainable weights.
    pub trainable: bool,
}

fn conv(specs: &mut Vec<ParamSpec>, prefix: &str, cout: usize, cin: usize, k: usize) {
    specs.push(ParamSpec {
        name: format!("{prefix}.w"),
        shape: vec![cout, cin, k, k],
        init: Init::KaimingUniform { fan_in: cin * k * k },
        trainable: true,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.b"),
        shape: vec![cout],
        init: Init::Constant(0.0),
        trainable: true,
    });
}

fn constant(specs: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>, v: f64, trainable: bool) {
    specs.push(ParamSpec {
        name,
        shape,
        init: Init::Constant(v),
        trainable,
    });
}

/// The complete, ordered parameter list of a network with this architecture.
pub fn param_specs(arch: &ArchConfig) -> Vec<ParamSpec> {
    let c0 = arch.base_channels;
    let mut s = Vec::new();
    conv(&mut s, "enc.init", c0, 1, 3);
    for block in 1..=3 {
        let (cin, width) = (arch.block_input(block), arch.branch_width(block));
        for k in [3, 5, 7] {
            conv(&mut s, &format!("enc.mk{block}.conv{k}"), width, cin, k);
            constant(&mut s, format!("enc.mk{block}.prelu{k}"), vec![1], PRELU_INIT, true);
        }
    }
    let ca = arch.attention_channels();
    let hidden = ca / arch.ca_reduction;
    conv(&mut s, "enc.psc.sa", 1, 2, 3);
    conv(&mut s, "enc.psc.ca.fc1", hidden, ca, 1);
    conv(&mut s, "enc.psc.ca.fc2", ca, hidden, 1);
    conv(&mut s, "enc.res", ca, ca, 3);
    let dec = arch.decoder_channels();
    for layer in 1..=5 {
        conv(&mut s, &format!("dec.conv{layer}"), dec[layer], dec[layer - 1], 3);
        if layer < 5 {
            let c = dec[layer];
            constant(&mut s, format!("dec.bn{layer}.gamma"), vec![c], 1.0, true);
            constant(&mut s, format!("dec.bn{layer}.beta"), vec![c], 0.0, true);
            constant(&mut s, format!("dec.bn{layer}.running_mean"), vec![c], 0.0, false);
            constant(&mut s, format!("dec.bn{layer}.running_var"), vec![c], 1.0, false);
            constant(&mut s, format!("dec.prelu{layer}"), vec![1], PRELU_INIT, true);
        }
    }
    s
}

/// Named, ordered weights of the fusion network plus the architecture that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    pub arch: ArchConfig,
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialization; the generator is xoshiro256++ seeded via SplitMix64.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let tensors = param_specs(&arch)
            .into_iter()
            .map(|spec| {
                let t = match spec.init {
                    Init::KaimingUniform { fan_in } => {
                        let bound = (6.0 / fan_in as f64).sqrt();
                        Tensor::from_fn(&spec.shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
                    }
                    Init::Constant(v) => Tensor::full(&spec.shape, T::from_f64(v)),
                };
                (spec.name, t)
            })
            .collect();
        Ok(Self { arch, tensors })
    }

    /// `(layer, in channels, out channels)` of every convolution, read off the weight shapes.
    pub fn conv_channels(&self) -> Vec<(&str, usize, usize)> {
        self.tensors
            .iter()
            .filter_map(|(name, t)| {
                let layer = name.strip_suffix(".w")?;
                Some((layer, t.shape()[1], t.shape()[0]))
            })
            .collect()
    }

    /// Assembles parameters from named tensors, checking the name set and every shape.
    pub fn from_tensors(arch: ArchConfig, tensors: IndexMap<String, Tensor<T>>) -> Result<Self> {
        arch.validate()?;
        let specs = param_specs(&arch);
        if specs.len() != tensors.len() {
            return Err(Error::Weights(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        let mut ordered = IndexMap::with_capacity(specs.len());
        for spec in specs {
            let t = tensors
                .get(&spec.name)
                .ok_or_else(|| Error::Weights(format!("missing tensor {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Weights(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            ordered.insert(spec.name, t.clone());
        }
        Ok(Self {
            arch,
            tensors: ordered,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter {name} has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// True for weights the optimizer updates; false for running statistics.
    pub fn is_trainable(name: &str) -> bool {
        !name.contains(".running_")
    }

    pub fn num_trainable(&self) -> usize {
        self.iter()
            .filter(|(n, _)| Self::is_trainable(n))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = ModelParams::<f32>::init(ArchConfig::toy(), 42).unwrap();
        let b = ModelParams::<f32>::init(ArchConfig::toy(), 42).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::<f32>::init(ArchConfig::toy(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_spec_list() {
        let arch = ArchConfig::toy();
        let p = ModelParams::<f32>::init(arch, 0).unwrap();
        for (spec, (name, t)) in param_specs(&arch).iter().zip(p.iter()) {
            assert_eq!(spec.name, name);
            assert_eq!(spec.shape, t.shape());
        }
        assert_eq!(p.get("dec.prelu2").unwrap().item(), 0.25);
        assert!(p.get("enc.mk1.conv7.b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("dec.bn3.gamma").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn kaiming_spread_matches_theory() {
        let arch = ArchConfig::toy();
        for seed in 0..10 {
            let p = ModelParams::<f64>::init(arch, seed).unwrap();
            let w = p.get("enc.res.w").unwrap();
            let fan_in = w.shape()[1] * 9;
            let mean = w.mean_f64();
            let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / w.numel() as f64)
                .sqrt();
            let theory = (2.0 / fan_in as f64).sqrt();
            assert!((std / theory - 1.0).abs() < 0.2, "seed {seed}: {std} vs {theory}");
        }
    }

    #[test]
    fn from_tensors_rejects_missing_and_misshapen() {
        let arch = ArchConfig::toy();
        let p = ModelParams::<f32>::init(arch, 1).unwrap();
        let mut map: IndexMap<String, Tensor<f32>> =
            p.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        assert!(ModelParams::from_tensors(arch, map.clone()).is_ok());
        map.insert("enc.init.b".into(), Tensor::zeros(&[5]));
        assert!(ModelParams::from_tensors(arch, map.clone()).is_err());
        map.shift_remove("enc.init.b");
        assert!(ModelParams::from_tensors(arch, map).is_err());
    }
}
