//! Mini-batch gradient descent on the squared-error loss.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::{CoilNet, Gradients, NormStats};
use crate::tensor::Tensor;

/// Samples per forward pass when computing validation loss.
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub shuffle: bool,
    /// Worker threads for the per-sample parts of a batch. Results do not
    /// depend on this value.
    pub threads: usize,
    /// Stop after this many epochs without improvement of the validation
    /// loss (training loss when no validation set is given). Off by default.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 2000,
            batch_size: 4,
            seed: 0,
            shuffle: true,
            threads: 1,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(
                "TrainConfig",
                format!("learning rate must be finite and non-negative, got {}", self.learning_rate),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("TrainConfig", "epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("TrainConfig", "batch size must be at least 1"));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::invalid("TrainConfig", "early-stop patience must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss over the mini-batches of this epoch.
    pub train_loss: f64,
    /// Mean per-sample loss on the validation set after the epoch.
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    /// One entry per completed epoch; fewer than `config.epochs` only when
    /// early stopping fired.
    pub epochs: Vec<EpochRecord>,
    pub norm_stats: NormStats,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// Writes the `epoch,train_loss,val_loss,seconds` loss curve. A missing
    /// validation loss is an empty field.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,seconds")?;
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, val, e.seconds)?;
        }
        Ok(())
    }
}

/// `½[(L̂−L*)² + (Q̂−Q*)²]` and its gradient `pred − label`.
pub fn mse_loss(pred: &Tensor, label: &Tensor) -> Result<(f64, Tensor)> {
    pred.expect_shape("mse_loss", &[2])?;
    label.expect_shape("mse_loss", &[2])?;
    let p = [pred.data()[0], pred.data()[1]];
    let y = [label.data()[0], label.data()[1]];
    let grad = Tensor::new(vec![2], residual(p, y).to_vec())?;
    Ok((pair_loss(p, y), grad))
}

pub(crate) fn pair_loss(pred: [f64; 2], label: [f64; 2]) -> f64 {
    let [a, b] = residual(pred, label);
    0.5 * (a * a + b * b)
}

fn residual(pred: [f64; 2], label: [f64; 2]) -> [f64; 2] {
    [pred[0] - label[0], pred[1] - label[1]]
}

/// Randomly assigns whole coils to the training split. Every sample of a
/// coil lands in the same split; sample order within each split follows the
/// input.
pub fn split_by_coil(dataset: &[Sample], train_coils: usize, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut coils: Vec<&str> = dataset
        .iter()
        .map(|s| s.coil_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if train_coils == 0 || train_coils >= coils.len() {
        return Err(Error::invalid(
            "split_by_coil",
            format!(
                "need 1 ≤ train_coils < distinct coils, got train_coils = {train_coils} with {} coils",
                coils.len()
            ),
        ));
    }
    coils.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_ids: BTreeSet<&str> = coils[..train_coils].iter().copied().collect();
    let (train, test) = dataset
        .iter()
        .cloned()
        .partition(|s| train_ids.contains(s.coil_id.as_str()));
    Ok((train, test))
}

/// Fits normalization on `train_set`, trains, and returns the updated net
/// with its report.
pub fn train(net: CoilNet, train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<(CoilNet, TrainReport)> {
    train_with(net, train_set, val_set, cfg, |_, _| Ok(()))
}

/// As [`train`], calling `on_epoch` after every epoch (for progress output
/// or periodic checkpoints). An error from the callback aborts training.
pub fn train_with(
    mut net: CoilNet,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &CoilNet) -> Result<()>,
) -> Result<(CoilNet, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("train", "training set is empty"));
    }
    for s in train_set.iter().chain(val_set) {
        s.validate()?;
    }
    let stats = NormStats::fit(train_set.iter().map(|s| (s.inductance_h, s.quality, s.freq_hz)));
    net.norm_stats = stats;
    let labels: Vec<[f64; 2]> = train_set
        .iter()
        .map(|s| stats.normalize_targets(s.inductance_h, s.quality))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grads = Gradients::zeros_like(&net);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut last_finite = f64::NAN;
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<(&Tensor, f64)> = batch.iter().map(|&i| (&train_set[i].image, train_set[i].freq_hz)).collect();
            let trace = net.forward_batch(&inputs, cfg.threads)?;
            let n = batch.len() as f64;
            let mut batch_loss = 0.0;
            let upstream: Vec<[f64; 2]> = trace
                .outputs()
                .iter()
                .zip(batch)
                .map(|(&pred, &i)| {
                    batch_loss += pair_loss(pred, labels[i]);
                    residual(pred, labels[i]).map(|r| r / n)
                })
                .collect();
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite_loss: last_finite,
                });
            }
            last_finite = batch_loss / n;
            loss_sum += batch_loss;
            net.backward_batch(&trace, &upstream, &mut grads, cfg.threads)?;
            sgd_step(&mut net, &grads, cfg.learning_rate);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(&net, val_set, cfg.threads)?)
        };
        if val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                last_finite_loss: last_finite,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record, &net)?;
        records.push(record);

        if let Some(patience) = cfg.early_stop_patience {
            let monitored = val_loss.unwrap_or(train_loss);
            if monitored < best {
                best = monitored;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    stopped_early = epoch < cfg.epochs;
                    break;
                }
            }
        }
    }

    let report = TrainReport {
        config: cfg.clone(),
        epochs: records,
        norm_stats: stats,
        stopped_early,
    };
    Ok((net, report))
}

/// `θ ← θ − η·g`.
pub fn sgd_step(net: &mut CoilNet, grads: &Gradients, learning_rate: f64) {
    for (p, g) in net.params_mut().into_iter().zip(&grads.tensors) {
        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= learning_rate * d;
        }
    }
}

/// Mean per-sample loss of `net` on `samples`, using the net's own
/// normalization.
pub fn mean_loss(net: &CoilNet, samples: &[Sample], threads: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("mean_loss", "no samples"));
    }
    let mut sum = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let inputs: Vec<(&Tensor, f64)> = chunk.iter().map(|s| (&s.image, s.freq_hz)).collect();
        let trace = net.forward_batch(&inputs, threads)?;
        for (&pred, s) in trace.outputs().iter().zip(chunk) {
            sum += pair_loss(pred, net.norm_stats.normalize_targets(s.inductance_h, s.quality));
        }
    }
    Ok(sum / samples.len() as f64)
}
