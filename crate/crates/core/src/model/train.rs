//! Supervised source training: mini-batch SGD with heavy-ball momentum on
//! mean cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layer::StatSource;
use super::Model;
use crate::error::{domain_err, Result};
use crate::numeric::Matrix;
use crate::stream::LabeledSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Fits every parameter of `model` to `data`, returning the trained model and
/// a per-epoch log. BatchNorm uses batch statistics and folds them into the
/// running buffers with each layer's momentum.
pub fn train_source(
    mut model: Model,
    data: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<(Model, Vec<EpochLog>)> {
    if data.is_empty() {
        return domain_err("empty training set");
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return domain_err(format!("learning rate must be positive, got {}", cfg.lr));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return domain_err(format!("momentum must be in [0, 1), got {}", cfg.momentum));
    }
    let n_classes = model.n_classes();
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= n_classes) {
        return domain_err(format!("label {bad} outside [0, {n_classes})"));
    }
    let bn_momentum = 0.1;
    let batch_size = cfg.batch_size.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = vec![0.0; model.n_params()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for chunk in order.chunks(batch_size) {
            // batch statistics need at least two rows
            if chunk.len() < 2 {
                continue;
            }
            let x = data.features.select_rows(chunk);
            let pass = model.forward_with(&x, StatSource::Batch, Some(bn_momentum))?;
            let b = chunk.len() as f64;
            let mut grad = pass.probs.clone().into_data();
            for (r, &i) in chunk.iter().enumerate() {
                let y = data.labels[i];
                let row = pass.probs.row(r);
                loss_sum -= row[y].max(1e-300).ln();
                if argmax(row) == y {
                    correct += 1;
                }
                grad[r * n_classes + y] -= 1.0;
            }
            grad.iter_mut().for_each(|g| *g /= b);
            seen += chunk.len();
            let grad = Matrix::new(chunk.len(), n_classes, grad)?;
            let g_all = model.backward_all(&pass, &grad)?;
            model.commit_running_stats(&pass);
            let mut params = model.params();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&g_all) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.lr * *v;
            }
            model.set_params(&params)?;
        }
        let denom = seen.max(1) as f64;
        log.push(EpochLog {
            epoch,
            loss: loss_sum / denom,
            accuracy: correct as f64 / denom,
        });
    }
    Ok((model, log))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
