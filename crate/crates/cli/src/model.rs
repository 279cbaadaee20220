//! Builds a trainable model from an `ExperimentConfig` and exposes the
//! uniform forward / params / analysis surface the subcommands need.

use crate::config::{DatasetKind, ExperimentConfig, Family, MixFlavor};
use crate::error::{CliError, Result};
use dimix_core::attention::Vit;
use dimix_core::block_mlp::{BlockMlp, ButterflyMlp};
use dimix_core::butterfly::ButterflySchedule;
use dimix_core::mixing::{CostAccounted, MixingSchedule, ModuleCost};
use dimix_core::patch_mixer::{MixKind, MlpMixer, PatchOnlyMixer, PatchSchedule};
use dimix_core::{DetRng, Tensor};

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;

/// Flat-input model plus a linear classification head.
pub struct FlatHead {
    head_w: Tensor<f32>,
    head_b: Tensor<f32>,
}

impl FlatHead {
    fn new(width: usize, classes: usize, rng: &mut DetRng) -> Self {
        let bound = 1.0 / (width as f64).sqrt();
        Self {
            head_w: Tensor::uniform(&[width, classes], -bound, bound, rng).with_grad(),
            head_b: Tensor::zeros(&[classes]).with_grad(),
        }
    }

    fn forward(&self, features: &Tensor<f32>) -> dimix_core::Result<Tensor<f32>> {
        Ok(features.matmul(&self.head_w)?.add(&self.head_b)?)
    }

    fn params(&self) -> Vec<Tensor<f32>> {
        vec![self.head_w.clone(), self.head_b.clone()]
    }

    fn param_count(&self) -> usize {
        self.head_w.len() + self.head_b.len()
    }
}

pub enum Model {
    BlockMlp { body: BlockMlp<f32>, head: FlatHead },
    ButterflyMlp { body: ButterflyMlp<f32>, head: FlatHead },
    Mixer(MlpMixer<f32>),
    PatchOnly(PatchOnlyMixer<f32>),
    Vit(Vit<f32>),
    ButterflyVit(Vit<f32>),
}

fn image_dataset(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.dataset {
        DatasetKind::Cifar10 | DatasetKind::Cifar100 | DatasetKind::TileClass => Ok(()),
        other => Err(CliError::Config(format!(
            "family `{}` needs an image dataset, but `{other}` is flat",
            cfg.family
        ))),
    }
}

fn flat_dataset(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.dataset {
        DatasetKind::PermutedParity | DatasetKind::BlockSum => Ok(()),
        other => Err(CliError::Config(format!(
            "family `{}` needs a flat dataset, but `{other}` is image-shaped",
            cfg.family
        ))),
    }
}

impl Model {
    /// Construct the configured model with weights seeded from `cfg.seed`.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let mut rng = DetRng::new(cfg.seed).derive(0x6d6f_6465);
        let classes = cfg.classes();
        Ok(match cfg.family {
            Family::BlockMlp => {
                flat_dataset(cfg)?;
                if cfg.radix == 0 || cfg.dims % cfg.radix != 0 {
                    return Err(CliError::Config(format!(
                        "block_mlp needs radix to divide dims: {} % {} != 0",
                        cfg.dims, cfg.radix
                    )));
                }
                let blocks = cfg.dims / cfg.radix;
                let widths = [cfg.radix, cfg.radix * cfg.expansion, cfg.radix];
                let body = BlockMlp::new(blocks, &widths, &mut rng);
                let head = FlatHead::new(cfg.dims, classes, &mut rng);
                Model::BlockMlp { body, head }
            }
            Family::ButterflyMlp => {
                flat_dataset(cfg)?;
                let schedule = ButterflySchedule::with_layers(cfg.dims, cfg.radix, cfg.layers)?;
                let body = ButterflyMlp::with_expansion(schedule, cfg.expansion, &mut rng)?;
                let head = FlatHead::new(cfg.dims, classes, &mut rng);
                Model::ButterflyMlp { body, head }
            }
            Family::Mixer => {
                image_dataset(cfg)?;
                let token_kind = match cfg.mix {
                    MixFlavor::Dense => MixKind::Dense,
                    MixFlavor::ButterflyLinear => MixKind::ButterflyLinear { radix: cfg.radix },
                    MixFlavor::Butterfly => MixKind::Butterfly { radix: cfg.radix },
                };
                Model::Mixer(MlpMixer::new(
                    IMAGE_SIDE,
                    IMAGE_CHANNELS,
                    cfg.patch,
                    cfg.dim,
                    cfg.layers,
                    token_kind,
                    MixKind::Dense,
                    classes,
                    &mut rng,
                )?)
            }
            Family::PatchOnly => {
                image_dataset(cfg)?;
                let schedule = PatchSchedule::new(IMAGE_SIDE, IMAGE_CHANNELS, &cfg.patch_sizes)?;
                Model::PatchOnly(PatchOnlyMixer::new(
                    schedule,
                    cfg.layers,
                    cfg.expansion,
                    classes,
                    &mut rng,
                )?)
            }
            Family::Vit => {
                image_dataset(cfg)?;
                Model::Vit(Vit::dense(
                    IMAGE_SIDE,
                    IMAGE_CHANNELS,
                    cfg.patch,
                    cfg.dim,
                    cfg.layers,
                    cfg.heads,
                    cfg.expansion,
                    classes,
                    &mut rng,
                )?)
            }
            Family::ButterflyVit => {
                image_dataset(cfg)?;
                Model::ButterflyVit(Vit::butterfly(
                    IMAGE_SIDE,
                    IMAGE_CHANNELS,
                    cfg.patch,
                    cfg.dim,
                    cfg.layers,
                    cfg.heads,
                    cfg.expansion,
                    cfg.radix,
                    classes,
                    &mut rng,
                )?)
            }
        })
    }

    /// Batch of inputs to logits `[B, classes]`.
    pub fn forward(&self, x: &Tensor<f32>) -> dimix_core::Result<Tensor<f32>> {
        Ok(match self {
            Model::BlockMlp { body, head } => head.forward(&body.forward(x)?)?,
            Model::ButterflyMlp { body, head } => head.forward(&body.forward(x)?)?,
            Model::Mixer(m) => m.forward(x)?,
            Model::PatchOnly(m) => m.forward(x)?,
            Model::Vit(m) | Model::ButterflyVit(m) => m.forward(x)?,
        })
    }

    pub fn params(&self) -> Vec<Tensor<f32>> {
        match self {
            Model::BlockMlp { body, head } => {
                let mut p = body.params();
                p.extend(head.params());
                p
            }
            Model::ButterflyMlp { body, head } => {
                let mut p = body.params();
                p.extend(head.params());
                p
            }
            Model::Mixer(m) => m.params(),
            Model::PatchOnly(m) => m.params(),
            Model::Vit(m) | Model::ButterflyVit(m) => m.params(),
        }
    }

    /// A zero batch with the right input shape for cost probes.
    pub fn dummy_input(&self, batch: usize) -> Tensor<f32> {
        let shape: Vec<usize> = match self {
            Model::BlockMlp { body, .. } => vec![batch, body.num_blocks() * body.in_block()],
            Model::ButterflyMlp { body, .. } => vec![batch, body.schedule().n()],
            _ => vec![batch, IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE],
        };
        Tensor::zeros(&shape)
    }

    /// The mixing structure the model imposes along its primary mixing axis
    /// (feature dims for flat models, tokens for image models).
    pub fn mixing_schedule(&self, cfg: &ExperimentConfig) -> Result<MixingSchedule> {
        Ok(match self {
            Model::BlockMlp { body, .. } => {
                let width = body.num_blocks() * body.in_block();
                MixingSchedule::from_attention(width, &[(body.in_block(), 1)])?
            }
            Model::ButterflyMlp { body, .. } => MixingSchedule::from_butterfly(body.schedule()),
            Model::Mixer(m) => match cfg.mix {
                MixFlavor::Dense => MixingSchedule::single_dense(m.tokens()),
                MixFlavor::ButterflyLinear | MixFlavor::Butterfly => {
                    MixingSchedule::from_butterfly(&ButterflySchedule::new(m.tokens(), cfg.radix)?)
                }
            },
            Model::PatchOnly(m) => MixingSchedule::from_patches(m.schedule(), m.depth()),
            Model::Vit(m) => MixingSchedule::single_dense(m.tokens()),
            Model::ButterflyVit(m) => {
                let schedule = ButterflySchedule::new(m.tokens(), cfg.radix)?;
                let stages: Vec<(usize, usize)> = (0..cfg.layers)
                    .map(|i| (cfg.radix, schedule.stride(i % schedule.layers())))
                    .collect();
                MixingSchedule::from_attention(m.tokens(), &stages)?
            }
        })
    }
}

impl CostAccounted for Model {
    fn param_count(&self) -> usize {
        match self {
            Model::BlockMlp { body, head } => body.param_count() + head.param_count(),
            Model::ButterflyMlp { body, head } => body.param_count() + head.param_count(),
            Model::Mixer(m) => m.param_count(),
            Model::PatchOnly(m) => m.param_count(),
            Model::Vit(m) | Model::ButterflyVit(m) => m.param_count(),
        }
    }

    fn permutation_count(&self) -> u64 {
        match self {
            Model::BlockMlp { .. } => 0,
            Model::ButterflyMlp { body, .. } => body.permutation_count(),
            Model::Mixer(m) => m.permutation_count(),
            Model::PatchOnly(_) => 0,
            Model::Vit(m) | Model::ButterflyVit(m) => m.permutation_count(),
        }
    }

    fn module_costs(&self) -> Vec<ModuleCost> {
        match self {
            Model::BlockMlp { body, head } => vec![
                ModuleCost { name: "block_mlp".into(), params: body.param_count() },
                ModuleCost { name: "head".into(), params: head.param_count() },
            ],
            Model::ButterflyMlp { body, head } => {
                let mut m = body.module_costs();
                m.push(ModuleCost { name: "head".into(), params: head.param_count() });
                m
            }
            Model::Mixer(m) => m.module_costs(),
            Model::PatchOnly(m) => m.module_costs(),
            Model::Vit(m) | Model::ButterflyVit(m) => m.module_costs(),
        }
    }
}
