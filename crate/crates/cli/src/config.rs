//! Line-based `key = value` experiment configuration. Unknown keys are hard
//! errors so that typos cannot silently fall back to defaults.

use crate::error::{CliError, Result};
use std::fmt;
use std::path::PathBuf;

/// Model families the CLI can build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Single block-diagonal MLP layer plus linear head (no cross-block
    /// mixing; the deliberately incomplete baseline).
    BlockMlp,
    /// Complete butterfly MLP stack plus linear head.
    ButterflyMlp,
    /// MLP-Mixer with selectable token-mixing kind.
    Mixer,
    /// Patch-only mixer with cycling patch sizes.
    PatchOnly,
    /// ViT with dense attention.
    Vit,
    /// ViT with butterfly block attention.
    ButterflyVit,
}

impl Family {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "block_mlp" => Family::BlockMlp,
            "butterfly_mlp" => Family::ButterflyMlp,
            "mixer" => Family::Mixer,
            "patch_only" => Family::PatchOnly,
            "vit" => Family::Vit,
            "butterfly_vit" => Family::ButterflyVit,
            other => {
                return Err(CliError::Config(format!(
                    "unknown family `{other}` (expected block_mlp, butterfly_mlp, mixer, patch_only, vit, butterfly_vit)"
                )))
            }
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::BlockMlp => "block_mlp",
            Family::ButterflyMlp => "butterfly_mlp",
            Family::Mixer => "mixer",
            Family::PatchOnly => "patch_only",
            Family::Vit => "vit",
            Family::ButterflyVit => "butterfly_vit",
        };
        f.write_str(s)
    }
}

/// Data sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    PermutedParity,
    BlockSum,
    TileClass,
}

impl DatasetKind {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "cifar10" => DatasetKind::Cifar10,
            "cifar100" => DatasetKind::Cifar100,
            "permuted_parity" => DatasetKind::PermutedParity,
            "block_sum" => DatasetKind::BlockSum,
            "tile_class" => DatasetKind::TileClass,
            other => {
                return Err(CliError::Config(format!(
                    "unknown dataset `{other}` (expected cifar10, cifar100, permuted_parity, block_sum, tile_class)"
                )))
            }
        })
    }

    pub fn is_synthetic(self) -> bool {
        matches!(
            self,
            DatasetKind::PermutedParity | DatasetKind::BlockSum | DatasetKind::TileClass
        )
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::PermutedParity => "permuted_parity",
            DatasetKind::BlockSum => "block_sum",
            DatasetKind::TileClass => "tile_class",
        };
        f.write_str(s)
    }
}

/// Token-mixing flavor for the `mixer` family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixFlavor {
    Dense,
    ButterflyLinear,
    Butterfly,
}

impl MixFlavor {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "dense" => MixFlavor::Dense,
            "butterfly_linear" => MixFlavor::ButterflyLinear,
            "butterfly" => MixFlavor::Butterfly,
            other => {
                return Err(CliError::Config(format!(
                    "unknown mix `{other}` (expected dense, butterfly_linear, butterfly)"
                )))
            }
        })
    }
}

/// Everything one experiment needs. Field names are the config keys.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub family: Family,
    pub dataset: DatasetKind,
    /// Directory holding CIFAR binary batches; unused for synthetic data.
    pub data_dir: Option<PathBuf>,
    /// Synthetic training-set size.
    pub samples: usize,
    /// Synthetic test-set size.
    pub test_samples: usize,
    /// Keep only the first k samples per class of the training set.
    pub subset_per_class: Option<usize>,
    /// Input width of flat synthetic tasks.
    pub dims: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub cosine_decay: bool,
    /// Model depth (mixing layers / transformer blocks).
    pub layers: usize,
    /// Embedding width for vit / mixer families.
    pub dim: usize,
    pub radix: usize,
    pub heads: usize,
    pub expansion: usize,
    /// ViT patch size.
    pub patch: usize,
    /// Patch-size cycle for patch_only (and mixer patch embedding).
    pub patch_sizes: Vec<usize>,
    pub mix: MixFlavor,
    /// Steps per timing measurement in `bench`.
    pub bench_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: Family::ButterflyMlp,
            dataset: DatasetKind::PermutedParity,
            data_dir: None,
            samples: 20000,
            test_samples: 2000,
            subset_per_class: None,
            dims: 64,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            lr: 1e-3,
            cosine_decay: true,
            layers: 2,
            dim: 128,
            radix: 8,
            heads: 8,
            expansion: 2,
            patch: 4,
            patch_sizes: vec![3, 2],
            mix: MixFlavor::Dense,
            bench_steps: 50,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse `{v}` as a value for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("cannot parse `{v}` as a bool for `{key}`"))),
    }
}

impl ExperimentConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "family" => self.family = Family::parse(v)?,
            "dataset" => self.dataset = DatasetKind::parse(v)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "samples" => self.samples = parse_num(key, v)?,
            "test_samples" => self.test_samples = parse_num(key, v)?,
            "subset_per_class" => self.subset_per_class = Some(parse_num(key, v)?),
            "dims" => self.dims = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "cosine_decay" => self.cosine_decay = parse_bool(key, v)?,
            "layers" => self.layers = parse_num(key, v)?,
            "dim" => self.dim = parse_num(key, v)?,
            "radix" => self.radix = parse_num(key, v)?,
            "heads" => self.heads = parse_num(key, v)?,
            "expansion" => self.expansion = parse_num(key, v)?,
            "patch" => self.patch = parse_num(key, v)?,
            "patch_sizes" => {
                self.patch_sizes = v
                    .split(',')
                    .map(|p| parse_num("patch_sizes", p))
                    .collect::<Result<Vec<usize>>>()?;
                if self.patch_sizes.is_empty() {
                    return Err(CliError::Config("patch_sizes must not be empty".into()));
                }
            }
            "mix" => self.mix = MixFlavor::parse(v)?,
            "bench_steps" => self.bench_steps = parse_num(key, v)?,
            other => return Err(CliError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a whole config file body. Lines are `key = value`; `#` starts
    /// a comment; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Cross-field checks that do not need the model built. Model-specific
    /// divisibility rules surface when the model is constructed, with the
    /// constraint named in the error.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CliError::Config("batch_size must be positive".into()));
        }
        if self.layers == 0 {
            return Err(CliError::Config("layers must be positive".into()));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(CliError::Config("lr must be a finite non-negative number".into()));
        }
        if !self.dataset.is_synthetic() && self.data_dir.is_none() {
            return Err(CliError::Config(format!(
                "dataset `{}` needs `data_dir` pointing at its binary batches",
                self.dataset
            )));
        }
        Ok(())
    }

    /// Number of classes the dataset produces.
    pub fn classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Cifar10 | DatasetKind::TileClass => 10,
            DatasetKind::Cifar100 => 100,
            DatasetKind::PermutedParity => 2,
            DatasetKind::BlockSum => 4,
        }
    }
}
