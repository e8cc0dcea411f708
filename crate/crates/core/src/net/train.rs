use log::{debug, info};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::framing::FrameSet;
use crate::par;
use crate::seed;

use super::{argmax, MlpModel};

const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 128,
            seed: 0,
            bn_momentum: super::DEFAULT_BN_MOMENTUM,
            bn_epsilon: super::DEFAULT_BN_EPSILON,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return bad(format!("bn_momentum must be in (0, 1), got {}", self.bn_momentum));
        }
        if !(self.bn_epsilon > 0.0 && self.bn_epsilon.is_finite()) {
            return bad(format!("bn_epsilon must be > 0, got {}", self.bn_epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch with the lowest validation loss; its parameters are returned.
    pub best_epoch: usize,
}

impl TrainingReport {
    /// CSV with one row per epoch followed by a `best_epoch` line.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,val_accuracy")?;
        for (i, e) in self.epochs.iter().enumerate() {
            writeln!(w, "{i},{:e},{:e},{:e}", e.train_loss, e.val_loss, e.val_accuracy)?;
        }
        writeln!(w, "# best_epoch={}", self.best_epoch)?;
        w.flush()?;
        Ok(())
    }
}

/// Weighted validation loss and window accuracy in Infer mode.
pub fn evaluate(model: &MlpModel, frames: &FrameSet, class_weights: &[f64]) -> Result<(f64, f64)> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames to evaluate"));
    }
    let k = model.output_dim();
    let chunks: Vec<usize> = (0..frames.len()).step_by(EVAL_CHUNK).collect();
    let parts = chunks
        .iter()
        .map(|&start| {
            let end = (start + EVAL_CHUNK).min(frames.len());
            let probs = model.predict(&frames.data[start * frames.dim..end * frames.dim])?;
            let mut loss = 0.0;
            let mut wsum = 0.0;
            let mut correct = 0usize;
            for (row, &y) in probs.chunks_exact(k).zip(&frames.labels[start..end]) {
                let w = class_weights[y];
                loss += -w * row[y].max(f64::MIN_POSITIVE).ln();
                wsum += w;
                correct += usize::from(argmax(row) == y);
            }
            Ok((loss, wsum, correct))
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, wsum, correct) = parts
        .into_iter()
        .fold((0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok((loss / wsum, correct as f64 / frames.len() as f64))
}

/// Mini-batch gradient descent with per-epoch seeded shuffling. Returns the
/// parameters from the epoch with the lowest validation loss.
pub fn train(
    mut model: MlpModel,
    train: &FrameSet,
    val: &FrameSet,
    config: &TrainConfig,
    class_weights: &[f64],
) -> Result<(MlpModel, TrainingReport)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training and validation frames must be non-empty"));
    }
    if train.dim != model.input_dim() || val.dim != model.input_dim() {
        return Err(Error::Dimension(format!(
            "frames are {} wide, model expects {}",
            train.dim,
            model.input_dim()
        )));
    }
    model.bn.momentum = config.bn_momentum;
    model.bn.epsilon = config.bn_epsilon;

    let dim = train.dim;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainingReport {
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
    };
    let mut best: Option<(f64, MlpModel)> = None;
    let mut batch = Vec::with_capacity(config.batch_size * dim);
    let mut labels = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        let mut rng = seed::rng(config.seed, &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            labels.clear();
            for &i in idx {
                batch.extend_from_slice(train.row(i));
                labels.push(train.labels[i]);
            }
            let step = match model.loss_and_grad(&batch, &labels, class_weights, &mut rng) {
                Ok(step) => step,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            if !step.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let w: f64 = labels.iter().map(|&y| class_weights[y]).sum();
            loss_sum += step.loss * w;
            weight_sum += w;
            model.sgd_step(&step.grads, config.learning_rate);
            model.update_running_stats(&step.batch_stats);
        }

        let (val_loss, val_accuracy) = match evaluate(&model, val, class_weights) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch }),
            Err(e) => return Err(e),
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let stats = EpochStats {
            train_loss: loss_sum / weight_sum,
            val_loss,
            val_accuracy,
        };
        debug!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val acc {:.4}",
            stats.train_loss, stats.val_loss, stats.val_accuracy
        );
        report.epochs.push(stats);
        if best.as_ref().is_none_or(|(l, _)| val_loss < *l) {
            report.best_epoch = epoch;
            best = Some((val_loss, model.clone()));
        }
    }
    info!(
        "best epoch {} (val loss {:.4}, val acc {:.4}); parallel kernels: {}",
        report.best_epoch,
        report.epochs[report.best_epoch].val_loss,
        report.epochs[report.best_epoch].val_accuracy,
        par::is_parallel()
    );
    let (_, best_model) = best.expect("at least one epoch");
    Ok((best_model, report))
}
