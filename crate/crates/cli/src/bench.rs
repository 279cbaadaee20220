//! Step-time and memory benchmark for dense versus butterfly attention.

use std::time::Instant;

use dimix_core::optim::Adam;
use dimix_core::DetRng;

use crate::config::{DatasetKind, ExperimentConfig, Family};
use crate::error::Result;
use crate::memtrack;
use crate::model::{Model, IMAGE_SIDE};

pub const HEADER: &str = "model,seq_len,steps,avg_step_ms,peak_live_mb";

const WARMUP_STEPS: usize = 2;
const INPUT_TAG: u64 = 0x6265_6e63;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub model: &'static str,
    pub seq_len: usize,
    pub steps: usize,
    pub avg_step_ms: f64,
    pub peak_live_mb: f64,
}

impl BenchRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3}",
            self.model, self.seq_len, self.steps, self.avg_step_ms, self.peak_live_mb
        )
    }
}

/// Benchmarks full training steps (forward, loss, backward, optimizer) for
/// the dense and butterfly attention models described by `cfg`, on one fixed
/// synthetic batch. Returns one row per model.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(2);
    for (name, family) in [("dense", Family::Vit), ("butterfly", Family::ButterflyVit)] {
        rows.push(bench_family(cfg, name, family)?);
    }
    Ok(rows)
}

fn bench_family(cfg: &ExperimentConfig, name: &'static str, family: Family) -> Result<BenchRow> {
    let mut cfg = cfg.clone();
    cfg.family = family;
    // No data is read during a benchmark; pin a synthetic image dataset so
    // the model builder accepts the config regardless of what the caller set.
    cfg.dataset = DatasetKind::TileClass;
    cfg.data_dir = None;

    let model = Model::build(&cfg)?;
    let mut opt = Adam::new(model.params(), cfg.lr);

    let inputs = model.dummy_input(cfg.batch_size);
    let mut rng = DetRng::new(cfg.seed).derive(INPUT_TAG);
    let values: Vec<f32> = (0..inputs.len())
        .map(|_| rng.uniform(-1.0, 1.0) as f32)
        .collect();
    inputs.set_data(&values)?;
    let labels: Vec<usize> = (0..cfg.batch_size).map(|i| i % cfg.classes()).collect();

    let mut step = || -> Result<()> {
        let logits = model.forward(&inputs)?;
        let loss = logits.cross_entropy(&labels)?;
        opt.zero_grad();
        loss.backward()?;
        opt.step()?;
        Ok(())
    };

    for _ in 0..WARMUP_STEPS {
        step()?;
    }
    memtrack::reset_peak();
    let started = Instant::now();
    for _ in 0..cfg.bench_steps {
        step()?;
    }
    let avg_step_ms = started.elapsed().as_secs_f64() * 1e3 / cfg.bench_steps as f64;

    Ok(BenchRow {
        model: name,
        seq_len: (IMAGE_SIDE / cfg.patch) * (IMAGE_SIDE / cfg.patch),
        steps: cfg.bench_steps,
        avg_step_ms,
        peak_live_mb: memtrack::peak_bytes() as f64 / (1024.0 * 1024.0),
    })
}
