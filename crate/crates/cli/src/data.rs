//! Dataset loading: CIFAR binary batches plus deterministic synthetic tasks.

use crate::config::{DatasetKind, ExperimentConfig};
use crate::error::{CliError, Result};
use dimix_core::{DetRng, Tensor};
use std::path::Path;

pub const CIFAR10_RECORD: usize = 3073; // 1 label byte + 3 * 1024 pixels
pub const CIFAR100_RECORD: usize = 3074; // coarse + fine label bytes + pixels
const CIFAR_PIXELS: usize = 3 * 32 * 32;

/// In-memory dataset: row-major features plus integer labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    data: Vec<f32>,
    feature_shape: Vec<usize>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(data: Vec<f32>, feature_shape: Vec<usize>, labels: Vec<usize>, classes: usize) -> Self {
        let per = feature_shape.iter().product::<usize>();
        assert_eq!(data.len(), labels.len() * per, "feature buffer does not match label count");
        Self { data, feature_shape, labels, classes }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape.iter().product()
    }

    /// Gather the given rows into a batch tensor of shape `[idxs.len(), ...feature_shape]`.
    pub fn batch(&self, idxs: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let per = self.feature_len();
        let mut out = Vec::with_capacity(idxs.len() * per);
        let mut labels = Vec::with_capacity(idxs.len());
        for &i in idxs {
            if i >= self.len() {
                return Err(CliError::Data(format!("sample index {i} out of range 0..{}", self.len())));
            }
            out.extend_from_slice(&self.data[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![idxs.len()];
        shape.extend_from_slice(&self.feature_shape);
        let t = Tensor::from_vec(&shape, out)?;
        Ok((t, labels))
    }

    /// Keep the first `k` samples of each class, in original order.
    pub fn subset_first_per_class(&self, k: usize) -> Self {
        let per = self.feature_len();
        let mut taken = vec![0usize; self.classes];
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, &label) in self.labels.iter().enumerate() {
            if taken[label] < k {
                taken[label] += 1;
                data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
                labels.push(label);
            }
        }
        Self { data, feature_shape: self.feature_shape.clone(), labels, classes: self.classes }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Decode one CIFAR-style batch. `label_bytes` is 1 for CIFAR-10 and 2 for
/// CIFAR-100 (coarse, fine); the last label byte is the one kept.
fn parse_cifar_batch(
    bytes: &[u8],
    name: &str,
    label_bytes: usize,
    classes: usize,
) -> Result<(Vec<f32>, Vec<usize>)> {
    let record = label_bytes + CIFAR_PIXELS;
    if bytes.len() % record != 0 {
        let whole = bytes.len() / record;
        return Err(CliError::Data(format!(
            "{name}: malformed batch: expected a multiple of {record} bytes per record, got {} bytes ({} whole records plus {} trailing)",
            bytes.len(),
            whole,
            bytes.len() - whole * record
        )));
    }
    let n = bytes.len() / record;
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let rec = &bytes[i * record..(i + 1) * record];
        let label = rec[label_bytes - 1] as usize;
        if label >= classes {
            return Err(CliError::Data(format!(
                "{name}: record {i}: label {label} out of range 0..={}",
                classes - 1
            )));
        }
        labels.push(label);
        data.extend(rec[label_bytes..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((data, labels))
}

fn load_batches(dir: &Path, files: &[&str], label_bytes: usize, classes: usize) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let path = dir.join(file);
        let bytes = read_file(&path)?;
        let (d, l) = parse_cifar_batch(&bytes, &path.display().to_string(), label_bytes, classes)?;
        data.extend(d);
        labels.extend(l);
    }
    Ok(Dataset::new(data, vec![3, 32, 32], labels, classes))
}

/// Load the six standard CIFAR-10 binary batches from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train_files = [
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
    ];
    let train = load_batches(dir, &train_files, 1, 10)?;
    let test = load_batches(dir, &["test_batch.bin"], 1, 10)?;
    Ok((train, test))
}

/// Load CIFAR-100 (`train.bin`, `test.bin`); the fine label is used.
pub fn load_cifar100(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_batches(dir, &["train.bin"], 2, 100)?;
    let test = load_batches(dir, &["test.bin"], 2, 100)?;
    Ok((train, test))
}

/// Write raw records in CIFAR-10 binary layout: one label byte then 3072
/// plane-major pixel bytes per record.
pub fn write_cifar10_batch(path: &Path, labels: &[usize], pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), labels.len() * CIFAR_PIXELS, "pixel buffer does not match label count");
    let mut bytes = Vec::with_capacity(labels.len() * CIFAR10_RECORD);
    for (i, &label) in labels.iter().enumerate() {
        assert!(label < 256, "label does not fit in one byte");
        bytes.push(label as u8);
        bytes.extend_from_slice(&pixels[i * CIFAR_PIXELS..(i + 1) * CIFAR_PIXELS]);
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Flat binary task: inputs are random bits, the label is the XOR of 8
/// marked bits, one at the start of each 8-wide block. The number of set
/// marked bits is uniform over 0..=8 (their placement random), so gradient
/// descent gets low-order structure to climb, while any classifier that is
/// additive across blocks reduces to a linear threshold over the 8 bits and
/// cannot exceed 5/9 accuracy. Mixing across all blocks is required to beat
/// that.
pub fn permuted_parity(dims: usize, n: usize, seed: u64) -> Result<Dataset> {
    if dims % 8 != 0 || dims / 8 < 8 {
        return Err(CliError::Config(format!(
            "permuted_parity needs dims to be a multiple of 8 with at least 8 blocks, got {dims}"
        )));
    }
    let blocks = 8;
    let block_len = dims / blocks;
    let mut rng = DetRng::new(seed).derive(0x7061_7269);
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    let mut marked = [0f32; 8];
    for _ in 0..n {
        let ones = rng.below(9) as usize;
        for (i, m) in marked.iter_mut().enumerate() {
            *m = if i < ones { 1.0 } else { 0.0 };
        }
        rng.shuffle(&mut marked);
        for d in 0..dims {
            let bit = if d % block_len == 0 {
                marked[d / block_len]
            } else {
                (rng.bit() as u8) as f32
            };
            data.push(bit);
        }
        labels.push(ones % 2);
    }
    Ok(Dataset::new(data, vec![dims], labels, 2))
}

/// Flat task solvable without cross-block mixing: the label is the block
/// with the largest mean, over 4 equal blocks.
pub fn block_sum(dims: usize, n: usize, seed: u64) -> Result<Dataset> {
    if dims % 4 != 0 {
        return Err(CliError::Config(format!("block_sum needs dims divisible by 4, got {dims}")));
    }
    let block_len = dims / 4;
    let mut rng = DetRng::new(seed).derive(0x626c_6f63);
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f32> = (0..dims).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
        let mut best = 0usize;
        let mut best_sum = f32::NEG_INFINITY;
        for b in 0..4 {
            let s: f32 = row[b * block_len..(b + 1) * block_len].iter().sum();
            if s > best_sum {
                best_sum = s;
                best = b;
            }
        }
        data.extend_from_slice(&row);
        labels.push(best);
    }
    Ok(Dataset::new(data, vec![dims], labels, 4))
}

/// Quantized image for the tile_class task: a class-specific plane wave
/// plus noise, one byte per channel value.
fn tile_class_record(class: usize, rng: &mut DetRng, out: &mut Vec<u8>) {
    let fx = 1.0 + (class % 5) as f64;
    let fy = 1.0 + (class / 5) as f64 * 2.0;
    let phase = class as f64 * 0.7;
    for ch in 0..3usize {
        for y in 0..32usize {
            for x in 0..32usize {
                let arg = core::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / 32.0
                    + phase
                    + ch as f64 * 0.9;
                let v = 0.5 + 0.3 * arg.sin() + rng.uniform(-0.12, 0.12);
                out.push((v.clamp(0.0, 1.0) * 255.0) as u8);
            }
        }
    }
}

/// Generate labels and raw pixel planes for `n` tile_class records, with
/// classes assigned round-robin so every class is equally represented.
pub fn tile_class_bytes(n: usize, seed: u64) -> (Vec<usize>, Vec<u8>) {
    let mut rng = DetRng::new(seed).derive(0x7469_6c65);
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for i in 0..n {
        let class = i % 10;
        labels.push(class);
        tile_class_record(class, &mut rng, &mut pixels);
    }
    (labels, pixels)
}

/// 32x32 RGB images in memory, same content as `tile_class_bytes` after
/// byte quantization and `/255` scaling.
pub fn tile_class(n: usize, seed: u64) -> Dataset {
    let (labels, pixels) = tile_class_bytes(n, seed);
    let data = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new(data, vec![3, 32, 32], labels, 10)
}

/// Build train and test splits for the configured dataset.
pub fn load(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (mut train, test) = match cfg.dataset {
        DatasetKind::Cifar10 => load_cifar10(cfg.data_dir.as_deref().expect("validated"))?,
        DatasetKind::Cifar100 => load_cifar100(cfg.data_dir.as_deref().expect("validated"))?,
        DatasetKind::PermutedParity => (
            permuted_parity(cfg.dims, cfg.samples, cfg.seed)?,
            permuted_parity(cfg.dims, cfg.test_samples, cfg.seed ^ 0x5eed)?,
        ),
        DatasetKind::BlockSum => (
            block_sum(cfg.dims, cfg.samples, cfg.seed)?,
            block_sum(cfg.dims, cfg.test_samples, cfg.seed ^ 0x5eed)?,
        ),
        DatasetKind::TileClass => (
            tile_class(cfg.samples, cfg.seed),
            tile_class(cfg.test_samples, cfg.seed ^ 0x5eed),
        ),
    };
    if let Some(k) = cfg.subset_per_class {
        train = train.subset_first_per_class(k);
    }
    if train.is_empty() || test.is_empty() {
        return Err(CliError::Data("empty dataset after loading".into()));
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar10_round_trips_through_the_binary_layout() {
        let dir = tempfile::tempdir().unwrap();
        let n = 30;
        let (labels, pixels) = tile_class_bytes(n, 7);
        for name in ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"] {
            write_cifar10_batch(&dir.path().join(name), &labels, &pixels).unwrap();
        }
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 5 * n);
        assert_eq!(test.len(), n);
        assert_eq!(train.feature_shape(), &[3, 32, 32]);
        assert_eq!(&train.labels()[..n], &labels[..]);
        let expected = pixels[0] as f32 / 255.0;
        let (batch, batch_labels) = train.batch(&[0]).unwrap();
        assert_eq!(batch.shape(), &[1, 3, 32, 32]);
        assert_eq!(batch.value()[0], expected);
        assert_eq!(batch_labels, vec![labels[0]]);
    }

    #[test]
    fn truncated_batches_report_expected_and_actual_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        std::fs::write(&path, vec![0u8; CIFAR10_RECORD * 2 - 5]).unwrap();
        let err = load_batches(dir.path(), &["data_batch_1.bin"], 1, 10).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3073"), "expected record size in: {msg}");
        assert!(msg.contains(&(CIFAR10_RECORD * 2 - 5).to_string()), "actual length in: {msg}");
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data_batch_1.bin");
        let mut bytes = vec![0u8; CIFAR10_RECORD];
        bytes[0] = 11;
        std::fs::write(&path, bytes).unwrap();
        let err = load_batches(dir.path(), &["data_batch_1.bin"], 1, 10).unwrap_err();
        assert!(err.to_string().contains("label 11"), "{err}");
    }

    #[test]
    fn cifar100_uses_the_fine_label() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = vec![0u8; CIFAR100_RECORD];
        bytes[0] = 3; // coarse
        bytes[1] = 42; // fine
        std::fs::write(dir.path().join("train.bin"), &bytes).unwrap();
        std::fs::write(dir.path().join("test.bin"), &bytes).unwrap();
        let (train, _) = load_cifar100(dir.path()).unwrap();
        assert_eq!(train.labels(), &[42]);
        assert_eq!(train.classes(), 100);
    }

    #[test]
    fn parity_labels_match_a_direct_recount() {
        let ds = permuted_parity(64, 50, 3).unwrap();
        for i in 0..ds.len() {
            let (row, labels) = ds.batch(&[i]).unwrap();
            let v = row.value();
            let mut parity = 0usize;
            for b in 0..8 {
                parity ^= v[b * 8] as usize;
            }
            assert_eq!(labels[0], parity);
            assert!(v.iter().all(|&x| x == 0.0 || x == 1.0));
        }
        let again = permuted_parity(64, 50, 3).unwrap();
        assert_eq!(again.labels(), ds.labels());
    }

    #[test]
    fn block_sum_labels_match_a_direct_recount() {
        let ds = block_sum(16, 40, 9).unwrap();
        for i in 0..ds.len() {
            let (row, labels) = ds.batch(&[i]).unwrap();
            let v = row.value();
            let sums: Vec<f32> = (0..4).map(|b| v[b * 4..(b + 1) * 4].iter().sum()).collect();
            let best = (0..4).max_by(|&a, &b| sums[a].partial_cmp(&sums[b]).unwrap()).unwrap();
            assert_eq!(labels[0], best);
        }
    }

    #[test]
    fn subsets_keep_the_first_k_of_each_class() {
        let data: Vec<f32> = (0..12).map(|i| i as f32).collect();
        let labels = vec![0, 1, 0, 1, 0, 1];
        let ds = Dataset::new(data, vec![2], labels, 2);
        let sub = ds.subset_first_per_class(2);
        assert_eq!(sub.len(), 4);
        assert_eq!(sub.labels(), &[0, 1, 0, 1]);
        let (row, _) = sub.batch(&[2]).unwrap();
        assert_eq!(row.value(), &[4.0, 5.0]);
    }

    #[test]
    fn tile_class_is_deterministic_and_balanced() {
        let a = tile_class(20, 11);
        let b = tile_class(20, 11);
        let (ra, _) = a.batch(&[5]).unwrap();
        let (rb, _) = b.batch(&[5]).unwrap();
        assert_eq!(ra.value(), rb.value());
        for c in 0..10 {
            assert_eq!(a.labels().iter().filter(|&&l| l == c).count(), 2);
        }
    }
}
