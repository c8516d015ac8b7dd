//! Turns a [`RunConfig`] plus a seed into concrete inputs: source data,
//! trained source model and test stream.

use crate::error::Result;
use crate::model::{train_source, EpochLog, Model, TrainConfig};
use crate::stream::{make_schedule, make_source, mix_seed, LabeledSet, ShiftStream, SourceSpec};

use super::config::RunConfig;

/// Seeds for each random component, all derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub source: u64,
    pub init: u64,
    pub train: u64,
    pub schedule: u64,
    pub stream: u64,
}

impl SeedPlan {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            source: mix_seed(seed, 1),
            init: mix_seed(seed, 2),
            train: mix_seed(seed, 3),
            schedule: mix_seed(seed, 4),
            stream: mix_seed(seed, 5),
        }
    }
}

pub fn source_spec(cfg: &RunConfig, seed: u64) -> Result<SourceSpec> {
    SourceSpec::orthogonal(
        cfg.n_classes,
        cfg.dim,
        cfg.cluster_radius,
        cfg.cluster_std,
        cfg.source_samples,
        SeedPlan::from_seed(seed).source,
    )
}

pub fn train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train_epochs,
        lr: cfg.train_lr,
        momentum: cfg.train_momentum,
        batch_size: cfg.train_batch_size,
        seed: SeedPlan::from_seed(seed).train,
    }
}

/// Source model trained on the seed's source set, plus its training data and log.
pub fn trained_model(cfg: &RunConfig, seed: u64) -> Result<(Model, LabeledSet, Vec<EpochLog>)> {
    let spec = source_spec(cfg, seed)?;
    let data = make_source(&spec)?;
    let init = Model::new(&cfg.model_spec(), SeedPlan::from_seed(seed).init)?;
    let (model, log) = train_source(init, &data, &train_config(cfg, seed))?;
    Ok((model, data, log))
}

pub fn test_stream(cfg: &RunConfig, seed: u64) -> Result<ShiftStream> {
    let plan = SeedPlan::from_seed(seed);
    let schedule = make_schedule(
        cfg.schedule_pattern,
        cfg.n_segments,
        cfg.mild_severity,
        cfg.severe_severity,
        cfg.segment_length,
        plan.schedule,
    )?;
    ShiftStream::generate(
        &source_spec(cfg, seed)?,
        &schedule,
        &cfg.shift_family(),
        cfg.batch_size,
        plan.stream,
    )
}

/// Everything one seed of an experiment needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub model: Model,
    pub stream: ShiftStream,
}

impl Scenario {
    pub fn build(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let (model, _, _) = trained_model(cfg, seed)?;
        Ok(Self {
            seed,
            model,
            stream: test_stream(cfg, seed)?,
        })
    }

    /// Same stream, supplied model (e.g. loaded from a file).
    pub fn with_model(cfg: &RunConfig, seed: u64, model: Model) -> Result<Self> {
        Ok(Self {
            seed,
            model,
            stream: test_stream(cfg, seed)?,
        })
    }
}

/// Held-out draw from the seed's source distribution (same cluster means,
/// independent samples).
pub fn validation_set(cfg: &RunConfig, seed: u64, n: usize) -> Result<LabeledSet> {
    let spec = source_spec(cfg, seed)?;
    make_source(&SourceSpec {
        n_samples: n,
        seed: mix_seed(spec.seed, 6),
        ..spec
    })
}

/// Fraction of `data` the model labels correctly with stored statistics.
pub fn accuracy_on(model: &Model, data: &LabeledSet) -> Result<f64> {
    let pass = model.forward(&data.features, &crate::model::NormPolicy::train_running())?;
    let correct = pass
        .probs
        .row_iter()
        .zip(&data.labels)
        .filter(|(p, &y)| crate::model::argmax(p) == y)
        .count();
    Ok(correct as f64 / data.len().max(1) as f64)
}
