//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key in
//! [`KEYS`] must appear exactly once; unknown keys are rejected. The text
//! written by [`RunConfig::to_text`] parses back to the same config, which
//! is what run manifests rely on.

use std::path::Path;

use crate::engine::{AdaptConfig, Method};
use crate::error::{Error, Result};
use crate::memory::Similarity;
use crate::model::{AdaptScope, ModelSpec, NormMode, NormPolicy, TrainConfig};
use crate::objective::ObjectiveKind;
use crate::stream::{SchedulePattern, ShiftFamily};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    pub alpha: f64,
    pub batch_size: usize,
    pub retrieval_size: usize,
    pub capacity_steps: usize,
    pub steps_per_batch: usize,
    pub objective: ObjectiveKind,
    pub norm_mode: NormMode,
    pub ema_momentum: f64,
    pub similarity: Similarity,
    pub adapt_scope: AdaptScope,

    pub n_classes: usize,
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub cluster_radius: f64,
    pub cluster_std: f64,
    pub source_samples: usize,

    pub train_epochs: usize,
    pub train_lr: f64,
    pub train_momentum: f64,
    pub train_batch_size: usize,

    pub schedule_pattern: SchedulePattern,
    pub n_segments: usize,
    pub segment_length: usize,
    pub mild_severity: f64,
    pub severe_severity: f64,
    pub shift_rotation: f64,
    pub shift_offset: f64,
    pub shift_gain: f64,
    pub shift_noise: f64,

    pub seeds: Vec<u64>,
    pub lr_multipliers: Vec<f64>,
    pub retrieval_sizes: Vec<usize>,
    pub n_orders: usize,
    pub out: String,
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "method",
    "alpha",
    "batch_size",
    "retrieval_size",
    "capacity_steps",
    "steps_per_batch",
    "objective",
    "norm_mode",
    "ema_momentum",
    "similarity",
    "adapt_scope",
    "n_classes",
    "dim",
    "hidden",
    "cluster_radius",
    "cluster_std",
    "source_samples",
    "train_epochs",
    "train_lr",
    "train_momentum",
    "train_batch_size",
    "schedule_pattern",
    "n_segments",
    "segment_length",
    "mild_severity",
    "severe_severity",
    "shift_rotation",
    "shift_offset",
    "shift_gain",
    "shift_noise",
    "seeds",
    "lr_multipliers",
    "retrieval_sizes",
    "n_orders",
    "out",
];

impl Default for RunConfig {
    fn default() -> Self {
        let adapt = AdaptConfig::default();
        let train = TrainConfig::default();
        let family = ShiftFamily::default();
        let model = ModelSpec::default();
        Self {
            seed: 0,
            method: adapt.method,
            alpha: train.lr,
            batch_size: adapt.batch_size,
            retrieval_size: adapt.retrieval_size,
            capacity_steps: adapt.capacity_steps,
            steps_per_batch: adapt.steps_per_batch,
            objective: adapt.objective,
            norm_mode: adapt.norm_policy.mode,
            ema_momentum: adapt.norm_policy.ema_momentum,
            similarity: adapt.similarity,
            adapt_scope: adapt.adapt_scope,
            n_classes: model.n_classes,
            dim: model.input_dim,
            hidden: model.hidden,
            cluster_radius: 5.0,
            cluster_std: 1.0,
            source_samples: 2000,
            train_epochs: train.epochs,
            train_lr: train.lr,
            train_momentum: train.momentum,
            train_batch_size: train.batch_size,
            schedule_pattern: SchedulePattern::Alternating,
            n_segments: 10,
            segment_length: 200,
            mild_severity: 0.25,
            severe_severity: 1.0,
            shift_rotation: family.rotation,
            shift_offset: family.offset,
            shift_gain: family.gain,
            shift_noise: family.noise,
            seeds: vec![0, 1, 2, 3, 4],
            lr_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            retrieval_sizes: vec![4, 8, 12, 16, 20],
            n_orders: 5,
            out: "out".into(),
        }
    }
}

fn norm_mode_str(m: NormMode) -> &'static str {
    match m {
        NormMode::TrainRunning => "train_running",
        NormMode::TestBatch => "test_batch",
        NormMode::TestEma => "test_ema",
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_scalar<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_scalar(key, s.trim())).collect()
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &key in KEYS {
            s.push_str(&format!("{key} = {}\n", self.get(key)));
        }
        s
    }

    fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "method" => self.method.to_string(),
            "alpha" => self.alpha.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "retrieval_size" => self.retrieval_size.to_string(),
            "capacity_steps" => self.capacity_steps.to_string(),
            "steps_per_batch" => self.steps_per_batch.to_string(),
            "objective" => self.objective.to_string(),
            "norm_mode" => norm_mode_str(self.norm_mode).into(),
            "ema_momentum" => self.ema_momentum.to_string(),
            "similarity" => self.similarity.to_string(),
            "adapt_scope" => self.adapt_scope.to_string(),
            "n_classes" => self.n_classes.to_string(),
            "dim" => self.dim.to_string(),
            "hidden" => join(&self.hidden),
            "cluster_radius" => self.cluster_radius.to_string(),
            "cluster_std" => self.cluster_std.to_string(),
            "source_samples" => self.source_samples.to_string(),
            "train_epochs" => self.train_epochs.to_string(),
            "train_lr" => self.train_lr.to_string(),
            "train_momentum" => self.train_momentum.to_string(),
            "train_batch_size" => self.train_batch_size.to_string(),
            "schedule_pattern" => self.schedule_pattern.to_string(),
            "n_segments" => self.n_segments.to_string(),
            "segment_length" => self.segment_length.to_string(),
            "mild_severity" => self.mild_severity.to_string(),
            "severe_severity" => self.severe_severity.to_string(),
            "shift_rotation" => self.shift_rotation.to_string(),
            "shift_offset" => self.shift_offset.to_string(),
            "shift_gain" => self.shift_gain.to_string(),
            "shift_noise" => self.shift_noise.to_string(),
            "seeds" => join(&self.seeds),
            "lr_multipliers" => join(&self.lr_multipliers),
            "retrieval_sizes" => join(&self.retrieval_sizes),
            "n_orders" => self.n_orders.to_string(),
            "out" => self.out.clone(),
            _ => unreachable!("key list and getters agree"),
        }
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_scalar(key, v)?,
            "method" => self.method = v.parse()?,
            "alpha" => self.alpha = parse_scalar(key, v)?,
            "batch_size" => self.batch_size = parse_scalar(key, v)?,
            "retrieval_size" => self.retrieval_size = parse_scalar(key, v)?,
            "capacity_steps" => self.capacity_steps = parse_scalar(key, v)?,
            "steps_per_batch" => self.steps_per_batch = parse_scalar(key, v)?,
            "objective" => self.objective = v.parse()?,
            "norm_mode" => {
                self.norm_mode = match v {
                    "train_running" => NormMode::TrainRunning,
                    "test_batch" => NormMode::TestBatch,
                    "test_ema" => NormMode::TestEma,
                    _ => return Err(Error::Config(format!("key norm_mode: unknown mode {v:?}"))),
                }
            }
            "ema_momentum" => self.ema_momentum = parse_scalar(key, v)?,
            "similarity" => self.similarity = v.parse()?,
            "adapt_scope" => self.adapt_scope = v.parse()?,
            "n_classes" => self.n_classes = parse_scalar(key, v)?,
            "dim" => self.dim = parse_scalar(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "cluster_radius" => self.cluster_radius = parse_scalar(key, v)?,
            "cluster_std" => self.cluster_std = parse_scalar(key, v)?,
            "source_samples" => self.source_samples = parse_scalar(key, v)?,
            "train_epochs" => self.train_epochs = parse_scalar(key, v)?,
            "train_lr" => self.train_lr = parse_scalar(key, v)?,
            "train_momentum" => self.train_momentum = parse_scalar(key, v)?,
            "train_batch_size" => self.train_batch_size = parse_scalar(key, v)?,
            "schedule_pattern" => self.schedule_pattern = v.parse()?,
            "n_segments" => self.n_segments = parse_scalar(key, v)?,
            "segment_length" => self.segment_length = parse_scalar(key, v)?,
            "mild_severity" => self.mild_severity = parse_scalar(key, v)?,
            "severe_severity" => self.severe_severity = parse_scalar(key, v)?,
            "shift_rotation" => self.shift_rotation = parse_scalar(key, v)?,
            "shift_offset" => self.shift_offset = parse_scalar(key, v)?,
            "shift_gain" => self.shift_gain = parse_scalar(key, v)?,
            "shift_noise" => self.shift_noise = parse_scalar(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "lr_multipliers" => self.lr_multipliers = parse_list(key, v)?,
            "retrieval_sizes" => self.retrieval_sizes = parse_list(key, v)?,
            "n_orders" => self.n_orders = parse_scalar(key, v)?,
            "out" => self.out = v.to_string(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("unknown key {k:?} on line {}", lineno + 1)));
            }
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("duplicate key {k:?} on line {}", lineno + 1)));
            }
            cfg.set(k, v)?;
        }
        if let Some(missing) = KEYS.iter().find(|k| !seen.contains(**k)) {
            return Err(Error::Config(format!("missing required key {missing:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.adapt_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.hidden.is_empty() {
            return Err(Error::Config("key hidden: need at least one hidden layer".into()));
        }
        if self.lr_multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Config("key lr_multipliers: entries must be positive".into()));
        }
        if self.retrieval_sizes.contains(&0) {
            return Err(Error::Config("key retrieval_sizes: entries must be positive".into()));
        }
        Ok(())
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            method: self.method,
            alpha: self.alpha,
            batch_size: self.batch_size,
            retrieval_size: self.retrieval_size,
            capacity_steps: self.capacity_steps,
            steps_per_batch: self.steps_per_batch,
            objective: self.objective,
            norm_policy: NormPolicy {
                mode: self.norm_mode,
                ema_momentum: self.ema_momentum,
            },
            similarity: self.similarity,
            adapt_scope: self.adapt_scope,
            seed: self.seed,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            input_dim: self.dim,
            hidden: self.hidden.clone(),
            n_classes: self.n_classes,
        }
    }

    pub fn shift_family(&self) -> ShiftFamily {
        ShiftFamily {
            rotation: self.shift_rotation,
            offset: self.shift_offset,
            gain: self.shift_gain,
            noise: self.shift_noise,
        }
    }

    /// Total stream length in steps.
    pub fn horizon(&self) -> usize {
        self.n_segments * self.segment_length
    }
}
