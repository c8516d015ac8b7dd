//! Feed-forward classifier `f = g ∘ h` with BatchNorm blocks and hand-written
//! reverse-mode gradients.
//!
//! The extractor `h` is a stack of Dense → BatchNorm → ReLU blocks; its output
//! rows are the feature keys stored in the memory bank. The head `g` is a
//! single dense layer followed by softmax.
//!
//! Parameters are addressed through one flat vector (dense weights, dense
//! bias, BN scale, BN shift, in layer order). BatchNorm running statistics are
//! buffers, not parameters, and never appear in that vector or in the
//! adaptation mask.

mod io;
mod layer;
mod train;

pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use layer::{BatchNorm, Dense, Layer, BN_EPS};
pub use train::{train_source, EpochLog, TrainConfig};
pub(crate) use train::argmax;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, domain_err, Error, Result};
use crate::numeric::{softmax, Matrix};
use layer::{LayerCache, StatSource};

/// Architecture of a freshly initialised model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_classes: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_dim: 8,
            hidden: vec![32, 32],
            n_classes: 4,
        }
    }
}

/// Which parameters test-time updates may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptScope {
    /// BatchNorm scale and shift only.
    BatchNormAffine,
    /// Every parameter of the feature extractor.
    FullExtractor,
}

impl std::str::FromStr for AdaptScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bn_affine" => Ok(Self::BatchNormAffine),
            "full_extractor" => Ok(Self::FullExtractor),
            other => Err(Error::Config(format!(
                "unknown adapt scope {other:?} (expected bn_affine or full_extractor)"
            ))),
        }
    }
}

impl std::fmt::Display for AdaptScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::BatchNormAffine => "bn_affine",
            Self::FullExtractor => "full_extractor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Stored running statistics, untouched.
    TrainRunning,
    /// Statistics of the current batch.
    TestBatch,
    /// Running statistics blended with the current batch, then kept.
    TestEma,
}

/// How BatchNorm layers pick their normalisation statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormPolicy {
    pub mode: NormMode,
    /// Only read in [`NormMode::TestEma`].
    pub ema_momentum: f64,
}

impl NormPolicy {
    pub const DEFAULT_EMA_MOMENTUM: f64 = 0.1;

    pub fn train_running() -> Self {
        Self {
            mode: NormMode::TrainRunning,
            ema_momentum: Self::DEFAULT_EMA_MOMENTUM,
        }
    }

    pub fn test_batch() -> Self {
        Self {
            mode: NormMode::TestBatch,
            ema_momentum: Self::DEFAULT_EMA_MOMENTUM,
        }
    }

    pub fn test_ema(momentum: f64) -> Self {
        Self {
            mode: NormMode::TestEma,
            ema_momentum: momentum,
        }
    }

    /// Batch statistics are degenerate for a single row; fall back to EMA.
    pub fn resolve_for_batch(self, batch_size: usize) -> Self {
        if self.mode == NormMode::TestBatch && batch_size < 2 {
            Self::test_ema(Self::DEFAULT_EMA_MOMENTUM)
        } else {
            self
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.mode == NormMode::TestEma && !(self.ema_momentum > 0.0 && self.ema_momentum < 1.0) {
            return domain_err(format!("ema momentum {} outside (0, 1)", self.ema_momentum));
        }
        Ok(())
    }

    fn stat_source(&self) -> (StatSource, Option<f64>) {
        match self.mode {
            NormMode::TrainRunning => (StatSource::Running, None),
            NormMode::TestBatch => (StatSource::Batch, None),
            NormMode::TestEma => (
                StatSource::Blend(self.ema_momentum),
                Some(self.ema_momentum),
            ),
        }
    }
}

/// Gradients of the adaptable parameters, in flat-parameter order with
/// non-adaptable entries skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Output of one forward pass plus what backward needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Extractor output, one row per sample (the memory-bank keys).
    pub features: Matrix,
    pub logits: Matrix,
    /// Softmax of the logits (the memory-bank values).
    pub probs: Matrix,
    caches: Vec<LayerCache>,
    generation: u64,
    stat_updates: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    layers: Vec<Layer>,
    split: usize,
    adapt_mask: Vec<bool>,
    // bumped whenever parameters change so stale forward caches are caught
    generation: u64,
}

impl Model {
    /// Fresh model with Glorot-uniform dense weights, zero biases, unit BN
    /// scale and default adaptation scope (BN affine).
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        if spec.input_dim == 0 || spec.n_classes == 0 || spec.hidden.iter().any(|&h| h == 0) {
            return dim_err("model extents must be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut width = spec.input_dim;
        for &h in &spec.hidden {
            layers.push(Layer::Dense(Dense::glorot(width, h, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm::new(h)));
            layers.push(Layer::Relu { width: h });
            width = h;
        }
        let split = layers.len();
        layers.push(Layer::Dense(Dense::glorot(width, spec.n_classes, &mut rng)));
        Self::from_layers(layers, split, AdaptScope::BatchNormAffine)
    }

    pub fn from_layers(layers: Vec<Layer>, split: usize, scope: AdaptScope) -> Result<Self> {
        if split > layers.len() {
            return dim_err("extractor split beyond layer count");
        }
        let mut width: Option<usize> = None;
        for layer in &layers {
            let (i, o) = layer.extents();
            if let Some(w) = width {
                if w != i {
                    return dim_err(format!("layer expects width {i}, previous produces {w}"));
                }
            }
            width = Some(o);
        }
        let mut model = Self {
            layers,
            split,
            adapt_mask: Vec::new(),
            generation: 0,
        };
        model.adapt_mask = model.scope_mask(scope);
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layers of the feature extractor `h`.
    pub fn feature_layers(&self) -> &[Layer] {
        &self.layers[..self.split]
    }

    /// Layers of the prediction head `g`.
    pub fn head_layers(&self) -> &[Layer] {
        &self.layers[self.split..]
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.extents().0)
    }

    pub fn feature_dim(&self) -> usize {
        if self.split == 0 {
            self.input_dim()
        } else {
            self.layers[self.split - 1].extents().1
        }
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.extents().1)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn adapt_mask(&self) -> &[bool] {
        &self.adapt_mask
    }

    pub fn n_adaptable(&self) -> usize {
        self.adapt_mask.iter().filter(|&&m| m).count()
    }

    pub fn set_adapt_scope(&mut self, scope: AdaptScope) {
        self.adapt_mask = self.scope_mask(scope);
    }

    pub fn set_adapt_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.n_params() {
            return dim_err(format!(
                "mask has {} entries, model has {} parameters",
                mask.len(),
                self.n_params()
            ));
        }
        self.adapt_mask = mask;
        Ok(())
    }

    fn scope_mask(&self, scope: AdaptScope) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.n_params());
        for (idx, layer) in self.layers.iter().enumerate() {
            let on = match scope {
                AdaptScope::BatchNormAffine => matches!(layer, Layer::BatchNorm(_)),
                AdaptScope::FullExtractor => idx < self.split,
            };
            mask.extend(std::iter::repeat_n(on, layer.n_params()));
        }
        mask
    }

    /// All parameters in flat order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            layer.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return dim_err(format!(
                "got {} parameter values, model has {}",
                values.len(),
                self.n_params()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            offset += layer.read_params(&values[offset..]);
        }
        self.generation += 1;
        Ok(())
    }

    /// Only the adaptable parameters, in flat order.
    pub fn adaptable_params(&self) -> Vec<f64> {
        self.params()
            .into_iter()
            .zip(&self.adapt_mask)
            .filter_map(|(v, &m)| m.then_some(v))
            .collect()
    }

    /// Running mean and variance of every BatchNorm layer, in layer order.
    pub fn running_stats(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(bn) => Some((bn.running_mean.clone(), bn.running_var.clone())),
                _ => None,
            })
            .collect()
    }

    /// Runs `h` then `g`. Running statistics are not modified; call
    /// [`Model::commit_running_stats`] (or use [`Model::forward_mut`]) to keep
    /// the EMA update that `TestEma` computes.
    pub fn forward(&self, batch: &Matrix, policy: &NormPolicy) -> Result<ForwardPass> {
        policy.validate()?;
        let (source, update) = policy.stat_source();
        self.forward_with(batch, source, update)
    }

    /// Forward pass that also commits any running-statistic update.
    pub fn forward_mut(&mut self, batch: &Matrix, policy: &NormPolicy) -> Result<ForwardPass> {
        let pass = self.forward(batch, policy)?;
        self.commit_running_stats(&pass);
        Ok(pass)
    }

    pub(crate) fn forward_with(
        &self,
        batch: &Matrix,
        source: StatSource,
        update: Option<f64>,
    ) -> Result<ForwardPass> {
        if batch.cols() != self.input_dim() {
            return dim_err(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            ));
        }
        if batch.rows() == 0 {
            return dim_err("empty batch");
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stat_updates = Vec::new();
        let mut x = batch.clone();
        let mut features = None;
        for (idx, layer) in self.layers.iter().enumerate() {
            if idx == self.split {
                features = Some(x.clone());
            }
            let (y, cache, upd) = layer.forward(&x, source, update);
            if let Some((m, v)) = upd {
                stat_updates.push((idx, m, v));
            }
            caches.push(cache);
            x = y;
        }
        let features = features.unwrap_or_else(|| x.clone());
        if !x.is_finite() || !features.is_finite() {
            return Err(Error::NonFinite("forward pass".into()));
        }
        let probs = softmax(&x)?;
        Ok(ForwardPass {
            features,
            logits: x,
            probs,
            caches,
            generation: self.generation,
            stat_updates,
        })
    }

    pub fn commit_running_stats(&mut self, pass: &ForwardPass) {
        for (idx, mean, var) in &pass.stat_updates {
            if let Layer::BatchNorm(bn) = &mut self.layers[*idx] {
                bn.running_mean.clone_from(mean);
                bn.running_var.clone_from(var);
            }
        }
    }

    /// Gradients of a scalar loss with respect to the adaptable parameters,
    /// given `d loss / d logits` for the pass.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &Matrix) -> Result<Gradients> {
        let all = self.backward_all(pass, grad_logits)?;
        Ok(Gradients::new(
            all.into_iter()
                .zip(&self.adapt_mask)
                .filter_map(|(g, &m)| m.then_some(g))
                .collect(),
        ))
    }

    /// Gradients for every parameter in flat order.
    pub(crate) fn backward_all(&self, pass: &ForwardPass, grad_logits: &Matrix) -> Result<Vec<f64>> {
        if pass.generation != self.generation || pass.caches.len() != self.layers.len() {
            return Err(Error::State(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        if grad_logits.shape() != pass.logits.shape() {
            return dim_err(format!(
                "logit gradient shape {:?} does not match logits {:?}",
                grad_logits.shape(),
                pass.logits.shape()
            ));
        }
        let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad_logits.clone();
        for idx in (0..self.layers.len()).rev() {
            let (gx, gp) = self.layers[idx].backward(&pass.caches[idx], &g);
            per_layer[idx] = gp;
            g = gx;
        }
        Ok(per_layer.concat())
    }

    /// `θ ← θ − η·∇` on the adaptable parameters only.
    pub fn sgd_step(&mut self, grads: &Gradients, eta: f64) -> Result<()> {
        if !(eta.is_finite() && eta > 0.0) {
            return domain_err(format!("learning rate must be positive and finite, got {eta}"));
        }
        if grads.len() != self.n_adaptable() {
            return dim_err(format!(
                "{} gradients for {} adaptable parameters",
                grads.len(),
                self.n_adaptable()
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let mut params = self.params();
        let mut g = grads.values.iter();
        for (p, &m) in params.iter_mut().zip(&self.adapt_mask) {
            if m {
                *p -= eta * g.next().expect("length checked above");
            }
        }
        self.set_params(&params)
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn touch(&mut self) {
        self.generation += 1;
    }
}

// generation is bookkeeping, not model state
impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.split == other.split
            && self.adapt_mask == other.adapt_mask
    }
}

/// Random model + input pair for gradient checks and property tests.
pub fn random_case(spec: &ModelSpec, batch: usize, seed: u64) -> (Model, Matrix) {
    let mut model = Model::new(spec, seed).expect("valid spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // move BN affine parameters and running stats away from the identity so
    // every gradient path is exercised
    for layer in model.layers_mut() {
        if let Layer::BatchNorm(bn) = layer {
            for v in bn.gamma.iter_mut() {
                *v = rng.random_range(0.5..1.5);
            }
            for v in bn.beta.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            for v in bn.running_mean.iter_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
            for v in bn.running_var.iter_mut() {
                *v = rng.random_range(0.5..2.0);
            }
        }
    }
    model.touch();
    let data = (0..batch * spec.input_dim)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    (model, Matrix::from_raw(batch, spec.input_dim, data))
}

#[cfg(test)]
mod tests;
