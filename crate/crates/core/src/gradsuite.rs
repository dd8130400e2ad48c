//! Finite-difference gradient suite over every differentiable op, network
//! block and loss, in double precision on small seeded tensors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::Result;
use crate::losses::{self, LossWeights, SsimConfig};
use crate::nn::{ArchConfig, ModelParams, Network};
use crate::tensor::gradcheck::{check, GradCheckOptions};
use crate::tensor::{BatchNormStats, ConvSpec, NormMode, Tape, Tensor, Var};

/// Worst relative error seen for one op across all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub worst: f64,
    pub checked: usize,
}

type Check = fn(&mut Gen) -> Result<(f64, usize)>;

struct Gen {
    rng: Xoshiro256PlusPlus,
}

impl Gen {
    fn uniform(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.rng.gen_range(-1.0..1.0))
    }

    /// Entries at least 0.05 away from zero, so kinks at 0 stay out of reach of the step.
    fn off_zero(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| {
            let m: f64 = self.rng.gen_range(0.05..1.0);
            if self.rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }

    /// Pairwise separated entries (spacing > 2 steps), so max-pool winners are stable.
    fn distinct(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        let span = (n.max(2) - 1) as f64;
        Tensor::new(shape, idx.into_iter().map(|k| 2.0 * k as f64 / span - 1.0).collect())
            .expect("shape matches")
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.rng.gen_range(0.5..1.5))
    }
}

fn opts() -> GradCheckOptions {
    GradCheckOptions {
        step: 1e-5,
        floor: 1e-6,
        max_elements: Some(40),
    }
}

fn run<F>(f: F, inputs: &[Tensor<f64>]) -> Result<(f64, usize)>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let r = check(f, inputs, opts())?;
    Ok((r.max_rel_error(), r.checked))
}

/// Scalar readout with a fixed random projection, so every output element matters.
fn project(tape: &Tape<f64>, y: &Var<f64>) -> Result<Var<f64>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0xC0FFEE);
    let p = Tensor::from_fn(y.shape(), |_| rng.gen_range(-1.0..1.0));
    let prod = tape.mul(y, &Var::constant(p))?;
    Ok(tape.sum(&prod))
}

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        base_channels: 2,
        ca_reduction: 2,
        image_side: 6,
        attention: true,
    }
}

fn tiny_net(g: &mut Gen, mode: NormMode) -> Result<Network<f64>> {
    let seed = g.rng.gen();
    let params = ModelParams::<f32>::init(tiny_arch(), seed)?.cast::<f64>();
    Ok(Network::frozen(&params, mode))
}

fn loss_pair(g: &mut Gen) -> (Tensor<f64>, Tensor<f64>) {
    let o = g.uniform(&[2, 1, 22, 22]);
    let i = g
        .uniform(&[2, 1, 22, 22])
        .zip_map(&o, |b, a| if (a - b).abs() < 0.01 { b + 0.02 } else { b })
        .expect("same shape");
    (o, i)
}

fn loss_cfg() -> SsimConfig {
    SsimConfig {
        scales: 2,
        ..SsimConfig::toy()
    }
}

const CHECKS: &[(&str, Check)] = &[
    ("add", |g| {
        run(|t, v| project(t, &t.add(&v[0], &v[1])?), &[g.uniform(&[2, 3, 4, 4]), g.uniform(&[1, 3, 1, 1])])
    }),
    ("sub", |g| {
        run(|t, v| project(t, &t.sub(&v[0], &v[1])?), &[g.uniform(&[2, 3, 4, 4]), g.uniform(&[2, 1, 4, 4])])
    }),
    ("mul", |g| {
        run(|t, v| project(t, &t.mul(&v[0], &v[1])?), &[g.uniform(&[2, 3, 4, 4]), g.uniform(&[2, 3, 1, 1])])
    }),
    ("div", |g| {
        run(|t, v| project(t, &t.div(&v[0], &v[1])?), &[g.uniform(&[2, 3, 4, 4]), g.positive(&[2, 3, 4, 4])])
    }),
    ("scale", |g| run(|t, v| project(t, &t.scale(&v[0], -1.7)), &[g.uniform(&[1, 2, 3, 3])])),
    ("add_scalar", |g| run(|t, v| project(t, &t.add_scalar(&v[0], 0.3)), &[g.uniform(&[1, 2, 3, 3])])),
    ("neg", |g| run(|t, v| project(t, &t.neg(&v[0])), &[g.uniform(&[1, 2, 3, 3])])),
    ("square", |g| run(|t, v| project(t, &t.square(&v[0])), &[g.uniform(&[1, 2, 3, 3])])),
    ("abs", |g| run(|t, v| project(t, &t.abs(&v[0])), &[g.off_zero(&[1, 2, 3, 3])])),
    ("relu", |g| run(|t, v| project(t, &t.relu(&v[0])), &[g.off_zero(&[1, 2, 4, 4])])),
    ("sigmoid", |g| run(|t, v| project(t, &t.sigmoid(&v[0])), &[g.uniform(&[1, 2, 4, 4])])),
    ("tanh", |g| run(|t, v| project(t, &t.tanh(&v[0])), &[g.uniform(&[1, 2, 4, 4])])),
    ("prelu", |g| {
        run(|t, v| project(t, &t.prelu(&v[0], &v[1])?), &[g.off_zero(&[2, 3, 4, 4]), g.uniform(&[1])])
    }),
    ("sum", |g| run(|t, v| Ok(t.sum(&t.square(&v[0]))), &[g.uniform(&[2, 2, 3, 3])])),
    ("mean", |g| run(|t, v| Ok(t.mean(&t.square(&v[0]))), &[g.uniform(&[2, 2, 3, 3])])),
    ("l2_norm", |g| run(|t, v| Ok(t.l2_norm(&v[0])), &[g.uniform(&[2, 2, 3, 3])])),
    ("reshape", |g| run(|t, v| project(t, &t.reshape(&v[0], &[1, 4, 3, 3])?), &[g.uniform(&[2, 2, 3, 3])])),
    ("concat_channels", |g| {
        run(
            |t, v| project(t, &t.concat_channels(&[&v[0], &v[1]])?),
            &[g.uniform(&[2, 2, 3, 3]), g.uniform(&[2, 3, 3, 3])],
        )
    }),
    ("narrow_channels", |g| run(|t, v| project(t, &t.narrow_channels(&v[0], 1, 2)?), &[g.uniform(&[2, 4, 3, 3])])),
    ("conv2d_3x3", |g| {
        run(
            |t, v| project(t, &t.conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::same(3))?),
            &[g.uniform(&[2, 3, 5, 5]), g.uniform(&[4, 3, 3, 3]), g.uniform(&[4])],
        )
    }),
    ("conv2d_5x5", |g| {
        run(
            |t, v| project(t, &t.conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::same(5))?),
            &[g.uniform(&[1, 2, 6, 6]), g.uniform(&[3, 2, 5, 5]), g.uniform(&[3])],
        )
    }),
    ("conv2d_7x7", |g| {
        run(
            |t, v| project(t, &t.conv2d(&v[0], &v[1], None, ConvSpec::same(7))?),
            &[g.uniform(&[1, 2, 7, 7]), g.uniform(&[2, 2, 7, 7])],
        )
    }),
    ("conv2d_valid", |g| {
        run(
            |t, v| project(t, &t.conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::valid())?),
            &[g.uniform(&[2, 3, 5, 5]), g.uniform(&[2, 3, 3, 3]), g.uniform(&[2])],
        )
    }),
    ("separable_filter_valid", |g| {
        let k = losses::SsimConfig { window: 5, sigma: 1.0, ..SsimConfig::toy() }.kernel();
        run(move |t, v| project(t, &t.separable_filter_valid(&v[0], &k)?), &[g.uniform(&[2, 2, 8, 8])])
    }),
    ("max_pool_spatial", |g| run(|t, v| project(t, &t.max_pool_spatial(&v[0])?), &[g.distinct(&[2, 4, 3, 3])])),
    ("avg_pool_spatial", |g| run(|t, v| project(t, &t.avg_pool_spatial(&v[0])?), &[g.uniform(&[2, 4, 3, 3])])),
    ("global_max_pool", |g| run(|t, v| project(t, &t.global_max_pool(&v[0])?), &[g.distinct(&[2, 3, 4, 4])])),
    ("global_avg_pool", |g| run(|t, v| project(t, &t.global_avg_pool(&v[0])?), &[g.uniform(&[2, 3, 4, 4])])),
    ("avg_pool_2x2", |g| run(|t, v| project(t, &t.avg_pool_2x2(&v[0])?), &[g.uniform(&[2, 2, 6, 6])])),
    ("crop_top_left", |g| run(|t, v| project(t, &t.crop_top_left(&v[0], 4, 3)?), &[g.uniform(&[1, 2, 5, 5])])),
    ("batch_norm_train", |g| {
        run(
            |t, v| {
                let (y, _) = t.batch_norm(&v[0], &v[1], &v[2], &BatchNormStats::new(3), NormMode::Train)?;
                project(t, &y)
            },
            &[g.uniform(&[2, 3, 3, 3]), g.positive(&[3]), g.uniform(&[3])],
        )
    }),
    ("batch_norm_eval", |g| {
        let running = BatchNormStats { mean: g.uniform(&[3]), var: g.positive(&[3]) };
        run(
            move |t, v| {
                let (y, _) = t.batch_norm(&v[0], &v[1], &v[2], &running, NormMode::Eval)?;
                project(t, &y)
            },
            &[g.uniform(&[2, 3, 3, 3]), g.positive(&[3]), g.uniform(&[3])],
        )
    }),
    ("mkblock", |g| {
        let net = tiny_net(g, NormMode::Train)?;
        let c = tiny_arch().block_input(2);
        run(move |t, v| project(t, &net.mkblock_forward(t, &v[0], 2)?), &[g.uniform(&[1, c, 4, 4])])
    }),
    ("channel_attention", |g| {
        let net = tiny_net(g, NormMode::Train)?;
        let c = tiny_arch().attention_channels();
        run(move |t, v| project(t, &net.channel_attention(t, &v[0])?), &[g.distinct(&[1, c, 3, 3])])
    }),
    ("spatial_attention", |g| {
        let net = tiny_net(g, NormMode::Train)?;
        let c = tiny_arch().attention_channels();
        run(move |t, v| project(t, &net.spatial_attention(t, &v[0])?), &[g.distinct(&[1, c, 3, 3])])
    }),
    ("pscnet", |g| {
        let net = tiny_net(g, NormMode::Train)?;
        let c = tiny_arch().attention_channels();
        run(move |t, v| project(t, &net.pscnet_forward(t, &v[0])?), &[g.distinct(&[1, c, 3, 3])])
    }),
    ("encoder", |g| {
        let net = tiny_net(g, NormMode::Train)?;
        run(move |t, v| project(t, &net.encoder_forward(t, &v[0])?), &[g.uniform(&[1, 1, 6, 6])])
    }),
    ("decoder", |g| {
        let c = tiny_arch().feature_channels();
        let net = tiny_net(g, NormMode::Train)?;
        run(
            move |t, v| {
                let mut n = net.clone();
                project(t, &n.decoder_forward(t, &v[0])?)
            },
            &[g.uniform(&[2, c, 3, 3])],
        )
    }),
    ("loss_pixel", |g| {
        let (o, i) = loss_pair(g);
        run(|t, v| losses::loss_pixel(t, &v[0], &v[1]), &[o, i])
    }),
    ("loss_ssim", |g| {
        let (o, i) = loss_pair(g);
        run(|t, v| losses::loss_ssim(t, &v[0], &v[1], &loss_cfg()), &[o, i])
    }),
    ("loss_msssim", |g| {
        let (o, i) = loss_pair(g);
        run(|t, v| losses::loss_msssim(t, &v[0], &v[1], &loss_cfg()), &[o, i])
    }),
    ("loss_l1", |g| {
        let (o, i) = loss_pair(g);
        run(|t, v| losses::loss_l1(t, &v[0], &v[1]), &[o, i])
    }),
    ("loss_msssim_l1", |g| {
        let (o, i) = loss_pair(g);
        run(|t, v| losses::combine_msssim_l1(t, &v[0], &v[1], 0.3, &loss_cfg()), &[o, i])
    }),
    ("loss_grad", |g| {
        let (o, i) = loss_pair(g);
        run(|t, v| losses::loss_grad(t, &v[0], &v[1]), &[o, i])
    }),
    ("loss_total", |g| {
        let (o, i) = loss_pair(g);
        run(
            |t, v| Ok(losses::loss_total(t, &v[0], &v[1], &LossWeights::default(), &loss_cfg())?.total),
            &[o, i],
        )
    }),
];

/// Names of the checked ops, in report order.
pub fn op_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every check once per seed and keeps the worst error per op.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<OpCheck>> {
    let mut out: Vec<OpCheck> = CHECKS
        .iter()
        .map(|(op, _)| OpCheck { op, worst: 0.0, checked: 0 })
        .collect();
    for &seed in seeds {
        for (k, (_, f)) in CHECKS.iter().enumerate() {
            let mut g = Gen {
                rng: Xoshiro256PlusPlus::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(k as u64)),
            };
            let (worst, checked) = f(&mut g)?;
            out[k].worst = out[k].worst.max(worst);
            out[k].checked += checked;
        }
    }
    Ok(out)
}
