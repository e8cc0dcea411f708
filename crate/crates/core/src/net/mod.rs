//! Deep multilayer perceptron trained from scratch.
//!
//! Layer stack: affine, batch-norm, ReLU, dropout (first hidden layer only),
//! then two affine+ReLU hidden layers and an affine softmax output. Dropout
//! is inverted, so inference applies no rescaling.

pub mod checkpoint;
pub mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::par;
use crate::seed;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use train::{train, EpochStats, TrainConfig, TrainingReport};

pub const DEFAULT_HIDDEN: [usize; 3] = [512, 256, 128];
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;

const LAYER_NAMES: [&str; 4] = ["hidden layer 1", "hidden layer 2", "hidden layer 3", "output layer"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Fully connected layer; `weights` is `out_dim x in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Running stats update as `momentum * running + (1 - momentum) * batch`.
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Three hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
    /// Normalizes the first hidden layer's pre-activations.
    pub bn: BatchNorm,
    pub dropout: f64,
}

/// Batch mean and (biased) variance of the first layer's pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Gradients in the same layout as [`MlpModel::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.weights[0],
            &self.biases[0],
            &self.gamma,
            &self.beta,
        ];
        for l in 1..self.weights.len() {
            out.push(&self.weights[l]);
            out.push(&self.biases[l]);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Gradients,
    pub batch_stats: BatchStats,
}

/// Builds a network with He-initialized weights, zero biases and identity
/// batch-norm. Deterministic per `seed`.
pub fn init_model(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<MlpModel> {
    if hidden.len() != 3 {
        return Err(Error::Config(format!(
            "the network has exactly 3 hidden layers, got {} sizes",
            hidden.len()
        )));
    }
    if input_dim == 0 || classes == 0 || hidden.contains(&0) {
        return Err(Error::Config(format!(
            "dimensions must be positive: input {input_dim}, hidden {hidden:?}, classes {classes}"
        )));
    }
    let dims: Vec<usize> = std::iter::once(input_dim)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(classes))
        .collect();
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(l, d)| {
            let (fan_in, out_dim) = (d[0], d[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let mut rng = seed::rng(seed, &[l as u64]);
            Dense {
                in_dim: fan_in,
                out_dim,
                weights: (0..fan_in * out_dim).map(|_| normal.sample(&mut rng)).collect(),
                bias: vec![0.0; out_dim],
            }
        })
        .collect();
    let h1 = hidden[0];
    Ok(MlpModel {
        layers,
        bn: BatchNorm {
            gamma: vec![1.0; h1],
            beta: vec![0.0; h1],
            running_mean: vec![0.0; h1],
            running_var: vec![1.0; h1],
            momentum: DEFAULT_BN_MOMENTUM,
            epsilon: DEFAULT_BN_EPSILON,
        },
        dropout: DEFAULT_DROPOUT,
    })
}

/// Intermediate values kept for backpropagation.
struct Trace {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Batch-norm output (pre-ReLU).
    bn_out: Vec<f64>,
    /// Scaled dropout mask (0 or 1/(1-r)); `None` when dropout is inactive.
    mask: Option<Vec<f64>>,
    /// Input to each of layers 2..=4.
    hidden: Vec<Vec<f64>>,
    /// Pre-activations of layers 2 and 3.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
    batch_stats: Option<BatchStats>,
}

fn check_finite(values: &[f64], layer: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Row-wise softmax via log-sum-exp; returns probabilities and per-row
/// log-normalizers.
fn softmax(logits: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let lse = par::map_range(logits.len() / k, |b| {
        let row = &logits[b * k..(b + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
    });
    let mut probs = logits.to_vec();
    par::for_each_chunk_mut(&mut probs, k, |b, row| {
        row.iter_mut().for_each(|z| *z = (*z - lse[b]).exp());
    });
    (probs, lse)
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.out_dim).collect()
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        self.dropout = rate;
        Ok(self)
    }

    /// Parameters in a fixed order: layer-1 weights and bias, batch-norm
    /// gamma and beta, then weights and bias of each remaining layer.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let (first, rest) = self.layers.split_at_mut(1);
        let mut out: Vec<&mut [f64]> = vec![
            &mut first[0].weights,
            &mut first[0].bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
        ];
        for l in rest {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum::<usize>()
            + self.bn.gamma.len()
            + self.bn.beta.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<usize> {
        let d = self.input_dim();
        if x.is_empty() || !x.len().is_multiple_of(d) {
            return Err(Error::Dimension(format!(
                "batch of {} values is not a whole number of {d}-wide rows",
                x.len()
            )));
        }
        Ok(x.len() / d)
    }

    fn run<R: Rng + ?Sized>(&self, x: &[f64], mode: Mode, rng: Option<&mut R>) -> Result<Trace> {
        let rows = self.check_input(x)?;
        let l1 = &self.layers[0];
        let h = l1.out_dim;
        let z1 = linalg::affine(x, l1.in_dim, &l1.weights, &l1.bias);
        check_finite(&z1, LAYER_NAMES[0])?;

        let (mean, var, batch_stats) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; h];
                for row in z1.chunks_exact(h) {
                    linalg::axpy(1.0, row, &mut mean);
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; h];
                for row in z1.chunks_exact(h) {
                    for ((v, z), m) in var.iter_mut().zip(row).zip(&mean) {
                        *v += (z - m) * (z - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
            Mode::Infer => (self.bn.running_mean.clone(), self.bn.running_var.clone(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.bn.epsilon).sqrt()).collect();
        let mut xhat = z1;
        par::for_each_chunk_mut(&mut xhat, h, |_, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        });
        let mut bn_out = xhat.clone();
        par::for_each_chunk_mut(&mut bn_out, h, |_, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.bn.gamma[j] * *v + self.bn.beta[j];
            }
        });
        check_finite(&bn_out, "batch norm")?;

        let mut h1 = bn_out.clone();
        relu_in_place(&mut h1);
        let mask = match (mode, rng) {
            (Mode::Train, Some(rng)) if self.dropout > 0.0 => {
                let keep = 1.0 / (1.0 - self.dropout);
                let mask: Vec<f64> = (0..h1.len())
                    .map(|_| if rng.gen::<f64>() < self.dropout { 0.0 } else { keep })
                    .collect();
                for (v, m) in h1.iter_mut().zip(&mask) {
                    *v *= m;
                }
                Some(mask)
            }
            _ => None,
        };

        let mut hidden = vec![h1];
        let mut pre = Vec::with_capacity(2);
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            let input = hidden.last().expect("non-empty");
            let z = linalg::affine(input, layer.in_dim, &layer.weights, &layer.bias);
            check_finite(&z, LAYER_NAMES[l])?;
            if l + 1 < self.layers.len() {
                let mut a = z.clone();
                relu_in_place(&mut a);
                pre.push(z);
                hidden.push(a);
            } else {
                return Ok(Trace {
                    xhat,
                    inv_std,
                    bn_out,
                    mask,
                    hidden,
                    pre,
                    logits: z,
                    batch_stats,
                });
            }
        }
        unreachable!("model has an output layer")
    }

    /// Class probabilities, one row per input row. Train mode normalizes
    /// with batch statistics, updates the running statistics and applies
    /// dropout drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(&mut self, x: &[f64], mode: Mode, rng: &mut R) -> Result<Vec<f64>> {
        let trace = self.run(x, mode, Some(rng))?;
        if let Some(stats) = &trace.batch_stats {
            self.update_running_stats(stats);
        }
        Ok(softmax(&trace.logits, self.output_dim()).0)
    }

    /// Infer-mode forward pass; read-only, so a shared model can serve
    /// concurrent callers. Each row's output depends only on that row.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.run::<rand_chacha::ChaCha8Rng>(x, Mode::Infer, None)?;
        Ok(softmax(&trace.logits, self.output_dim()).0)
    }

    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        let m = self.bn.momentum;
        for (r, b) in self.bn.running_mean.iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.bn.running_var.iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    /// Class-weighted cross-entropy `sum_i w[y_i] * -ln p_i[y_i] / sum_i w[y_i]`
    /// and its gradient, computed in Train mode. The dropout mask is drawn
    /// once from `rng` and reused by the backward pass. Running statistics
    /// are not touched; the caller applies the returned batch stats.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        labels: &[usize],
        class_weights: &[f64],
        rng: &mut R,
    ) -> Result<LossAndGrad> {
        let k = self.output_dim();
        if class_weights.len() != k {
            return Err(Error::Dimension(format!(
                "{} class weights for {k} classes",
                class_weights.len()
            )));
        }
        let rows = self.check_input(x)?;
        if labels.len() != rows {
            return Err(Error::Dimension(format!("{} labels for {rows} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Dimension(format!("label {bad} out of range for {k} classes")));
        }
        let trace = self.run(x, Mode::Train, Some(rng))?;
        let (probs, lse) = softmax(&trace.logits, k);

        let wsum: f64 = labels.iter().map(|&y| class_weights[y]).sum();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(b, &y)| class_weights[y] * (lse[b] - trace.logits[b * k + y]))
            .sum::<f64>()
            / wsum;

        let mut delta = probs;
        par::for_each_chunk_mut(&mut delta, k, |b, row| {
            let y = labels[b];
            row[y] -= 1.0;
            let scale = class_weights[y] / wsum;
            row.iter_mut().for_each(|g| *g *= scale);
        });

        let n_layers = self.layers.len();
        let mut dweights = vec![Vec::new(); n_layers];
        let mut dbiases = vec![Vec::new(); n_layers];
        for l in (1..n_layers).rev() {
            let layer = &self.layers[l];
            let input = &trace.hidden[l - 1];
            let (dw, db) = linalg::weight_grads(&delta, layer.out_dim, input, layer.in_dim);
            dweights[l] = dw;
            dbiases[l] = db;
            let mut d_in = linalg::backprop_input(&delta, layer.out_dim, &layer.weights, layer.in_dim);
            if l >= 2 {
                for (g, z) in d_in.iter_mut().zip(&trace.pre[l - 2]) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = d_in;
        }

        // delta is now d(loss)/d(dropout output) of layer 1.
        if let Some(mask) = &trace.mask {
            for (g, m) in delta.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        for (g, y) in delta.iter_mut().zip(&trace.bn_out) {
            if *y <= 0.0 {
                *g = 0.0;
            }
        }

        let h = self.layers[0].out_dim;
        let mut dgamma = vec![0.0; h];
        let mut dbeta = vec![0.0; h];
        for (dy, xh) in delta.chunks_exact(h).zip(trace.xhat.chunks_exact(h)) {
            for j in 0..h {
                dgamma[j] += dy[j] * xh[j];
                dbeta[j] += dy[j];
            }
        }
        // dxhat = dy * gamma; dz = inv_std / B * (B dxhat - sum dxhat - xhat sum(dxhat xhat))
        let sum_dxhat: Vec<f64> = (0..h).map(|j| dbeta[j] * self.bn.gamma[j]).collect();
        let sum_dxhat_xhat: Vec<f64> = (0..h).map(|j| dgamma[j] * self.bn.gamma[j]).collect();
        let n = rows as f64;
        let mut dz1 = delta;
        par::for_each_chunk_mut(&mut dz1, h, |b, row| {
            let xh = &trace.xhat[b * h..(b + 1) * h];
            for j in 0..h {
                let dxhat = row[j] * self.bn.gamma[j];
                row[j] = trace.inv_std[j] / n * (n * dxhat - sum_dxhat[j] - xh[j] * sum_dxhat_xhat[j]);
            }
        });
        let l1 = &self.layers[0];
        let (dw, db) = linalg::weight_grads(&dz1, l1.out_dim, x, l1.in_dim);
        dweights[0] = dw;
        dbiases[0] = db;

        Ok(LossAndGrad {
            loss,
            grads: Gradients {
                weights: dweights,
                biases: dbiases,
                gamma: dgamma,
                beta: dbeta,
            },
            batch_stats: trace.batch_stats.expect("train mode records batch stats"),
        })
    }

    /// Plain gradient-descent update.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) {
        for (p, g) in self.params_mut().into_iter().zip(grads.slices()) {
            linalg::axpy(-learning_rate, g, p);
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
