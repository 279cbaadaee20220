//! Training and evaluation loops shared by the `train` and `eval` subcommands.

use std::path::Path;
use std::time::Instant;

use dimix_core::optim::Adam;
use dimix_core::DetRng;

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{self, Dataset};
use crate::error::{CliError, Result};
use crate::metrics::{MetricsFile, MetricsRow};
use crate::model::Model;

const SHUFFLE_TAG: u64 = 0x7368_7566;

/// Smoothing factor for the exponential moving average of the training loss.
/// The EMA exists purely as a divergence guard: training aborts with a numeric
/// error as soon as it stops being finite.
const EMA_DECAY: f64 = 0.9;

/// Summary of a finished training run.
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub best_epoch: usize,
    pub best_test_acc: f64,
}

impl TrainOutcome {
    pub fn final_row(&self) -> &MetricsRow {
        self.rows.last().expect("training runs at least one epoch")
    }
}

/// Runs the full training loop: per-epoch metrics rows appended to
/// `metrics.csv`, the final model saved to `final.ckpt`, and the model with
/// the best test accuracy saved to `best.ckpt`, all under `out_dir`.
pub fn train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let (train_set, test_set) = data::load(cfg)?;
    let model = Model::build(cfg)?;
    let params = model.params();

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;
    let mut opt = Adam::new(params.clone(), cfg.lr);
    if cfg.cosine_decay {
        opt = opt.with_cosine_decay(total_steps);
    }

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let metrics = MetricsFile::create(&out_dir.join("metrics.csv"))?;

    let shuffle_rng = DetRng::new(cfg.seed).derive(SHUFFLE_TAG);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut loss_ema: Option<f64> = None;
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_test_acc = f64::NEG_INFINITY;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        shuffle_rng.derive(epoch as u64).shuffle(&mut indices);

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch_ids in indices.chunks(cfg.batch_size) {
            let (inputs, labels) = train_set.batch(batch_ids)?;
            let logits = model.forward(&inputs)?;
            let loss = logits.cross_entropy(&labels)?;
            let loss_val = f64::from(loss.value()[0]);

            loss_ema = Some(match loss_ema {
                None => loss_val,
                Some(ema) => EMA_DECAY * ema + (1.0 - EMA_DECAY) * loss_val,
            });
            if !loss_ema.unwrap().is_finite() {
                return Err(CliError::Numeric(format!(
                    "training diverged: loss EMA became non-finite at epoch {epoch} \
                     (batch loss {loss_val})"
                )));
            }

            opt.zero_grad();
            loss.backward()?;
            opt.step()?;

            loss_sum += loss_val * batch_ids.len() as f64;
            correct += count_correct(&logits.argmax_rows(), &labels);
        }

        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = correct as f64 / train_set.len() as f64;
        let test_acc = evaluate(&model, &test_set, cfg.batch_size)?;
        let row = MetricsRow {
            epoch,
            train_loss,
            train_acc,
            test_acc,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        metrics.append(&row)?;
        eprintln!(
            "epoch {epoch:>3}: train_loss {train_loss:.4} train_acc {train_acc:.4} \
             test_acc {test_acc:.4} lr {:.2e}",
            opt.current_lr()
        );
        rows.push(row);

        if test_acc > best_test_acc {
            best_test_acc = test_acc;
            best_epoch = epoch;
            checkpoint::save_params(&out_dir.join("best.ckpt"), &params)?;
        }
    }

    checkpoint::save_params(&out_dir.join("final.ckpt"), &params)?;
    Ok(TrainOutcome {
        rows,
        best_epoch,
        best_test_acc,
    })
}

/// Test accuracy of `model` on `dataset`, batched in storage order.
pub fn evaluate(model: &Model, dataset: &Dataset, batch_size: usize) -> Result<f64> {
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0usize;
    for batch_ids in indices.chunks(batch_size.max(1)) {
        let (inputs, labels) = dataset.batch(batch_ids)?;
        let logits = model.forward(&inputs)?;
        correct += count_correct(&logits.argmax_rows(), &labels);
    }
    Ok(correct as f64 / dataset.len() as f64)
}

fn count_correct(predicted: &[usize], labels: &[usize]) -> usize {
    predicted
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count()
}
