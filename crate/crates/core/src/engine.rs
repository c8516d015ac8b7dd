//! The adaptation loop.
//!
//! Each step of the dynamic method:
//! 1. forward the batch with the current parameters to get per-sample
//!    feature keys and predictions;
//! 2. for each sample, average the predictions of its nearest bank entries
//!    and take the symmetric KL to the live prediction;
//! 3. average over the batch and scale by `alpha` to get the step size;
//! 4. take one (or `steps_per_batch`) gradient steps on the test objective;
//! 5. forward again with the updated parameters; those outputs are the
//!    returned predictions and are written to the bank.
//!
//! While the bank holds fewer than `retrieval_size` entries the step size is
//! `alpha`. The fixed-rate baseline runs the same loop with step size `alpha`
//! throughout; `ptbn` only re-estimates normalisation statistics; `none`
//! leaves everything untouched.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, dim_err, Error, Result};
use crate::memory::{batch_discrepancy, reference_prediction, sample_discrepancy, MemoryBank, Similarity};
use crate::metrics::Metrics;
use crate::model::{AdaptScope, ForwardPass, Model, NormMode, NormPolicy};
use crate::numeric::Matrix;
use crate::objective::ObjectiveKind;
use crate::stream::{ShiftStream, TestBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Ptbn,
    Fixed,
    Dltta,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::Ptbn, Method::Fixed, Method::Dltta];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Ptbn => "ptbn",
            Method::Fixed => "fixed",
            Method::Dltta => "dltta",
        }
    }

    fn uses_gradient(self) -> bool {
        matches!(self, Method::Fixed | Method::Dltta)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; valid methods: none, ptbn, fixed, dltta"
                ))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub method: Method,
    /// Base learning rate; the fixed baseline's step size and the dynamic
    /// method's scale factor.
    pub alpha: f64,
    pub batch_size: usize,
    pub retrieval_size: usize,
    /// Bank capacity in adaptation steps; the bank holds `capacity_steps * batch_size` entries.
    pub capacity_steps: usize,
    pub steps_per_batch: usize,
    pub objective: ObjectiveKind,
    pub norm_policy: NormPolicy,
    pub similarity: Similarity,
    pub adapt_scope: AdaptScope,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            method: Method::Dltta,
            alpha: 0.05,
            batch_size: 16,
            retrieval_size: 12,
            capacity_steps: 4,
            steps_per_batch: 1,
            objective: ObjectiveKind::Entropy,
            norm_policy: NormPolicy::test_batch(),
            similarity: Similarity::L2,
            adapt_scope: AdaptScope::BatchNormAffine,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return domain_err(format!("alpha must be positive and finite, got {}", self.alpha));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("retrieval_size", self.retrieval_size),
            ("capacity_steps", self.capacity_steps),
            ("steps_per_batch", self.steps_per_batch),
        ] {
            if v == 0 {
                return domain_err(format!("{name} must be at least 1"));
            }
        }
        self.norm_policy.validate()
    }

    pub fn bank_capacity(&self) -> usize {
        self.capacity_steps * self.batch_size
    }

    pub fn new_bank(&self, model: &Model) -> Result<MemoryBank> {
        MemoryBank::new(self.bank_capacity(), model.feature_dim(), model.n_classes())
    }
}

/// Marker stored in [`StepTelemetry::discrepancy`] when no estimate was made.
pub const NO_DISCREPANCY: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StepTelemetry {
    pub step_index: usize,
    /// Batch discrepancy, or [`NO_DISCREPANCY`] during warm-up and for
    /// methods that do not estimate it.
    pub discrepancy: f64,
    pub applied_lr: f64,
    /// Test objective on the batch before any update.
    pub tta_loss_before: f64,
    pub predictions: Vec<usize>,
    pub probs: Matrix,
    /// Bank occupancy when the step started.
    pub bank_size: usize,
    pub severity_label: String,
    /// Filled in by [`run_stream`] once labels are released.
    pub correct: Option<usize>,
    /// Set when the step was aborted and rolled back.
    pub error: Option<String>,
}

/// Receives each step's telemetry as it is produced.
pub trait TelemetrySink {
    fn record(&mut self, step: &StepTelemetry);
}

impl TelemetrySink for Vec<StepTelemetry> {
    fn record(&mut self, step: &StepTelemetry) {
        self.push(step.clone());
    }
}

/// Discards everything.
pub struct NullSink;

impl TelemetrySink for NullSink {
    fn record(&mut self, _: &StepTelemetry) {}
}

impl<F: FnMut(&StepTelemetry)> TelemetrySink for F {
    fn record(&mut self, step: &StepTelemetry) {
        self(step)
    }
}

/// `alpha · discrepancy`.
pub fn dynamic_lr(discrepancy: f64, alpha: f64) -> Result<f64> {
    if !discrepancy.is_finite() || !alpha.is_finite() {
        return Err(Error::NonFinite("dynamic_lr input".into()));
    }
    if discrepancy < 0.0 {
        return domain_err(format!("negative discrepancy {discrepancy}"));
    }
    Ok(alpha * discrepancy)
}

/// Per-sample discrepancies of a forward pass against the bank, or `None`
/// while the bank holds fewer than `retrieval_size` entries. A
/// `retrieval_size` above the bank capacity is capped at the capacity.
pub fn estimate_discrepancy(
    bank: &MemoryBank,
    pass: &ForwardPass,
    retrieval_size: usize,
    similarity: Similarity,
) -> Result<Option<Vec<f64>>> {
    if bank.len() < retrieval_size.min(bank.capacity()) {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(pass.features.rows());
    for (key, pred) in pass.features.row_iter().zip(pass.probs.row_iter()) {
        let support = bank
            .retrieve(key, retrieval_size, similarity)?
            .ok_or_else(|| Error::State("bank emptied during estimation".into()))?;
        let reference = reference_prediction(&support)?;
        out.push(sample_discrepancy(&reference, pred)?);
    }
    Ok(Some(out))
}

fn predictions_of(probs: &Matrix) -> Vec<usize> {
    probs.row_iter().map(crate::model::argmax).collect()
}

/// Policy for forwards that follow the first one of a step. In EMA mode the
/// first forward already folded the batch into the running statistics.
fn follow_up_policy(policy: NormPolicy) -> NormPolicy {
    match policy.mode {
        NormMode::TestEma => NormPolicy::train_running(),
        _ => policy,
    }
}

/// One step of the loop for `cfg.method`. Returns `Err` only for caller
/// mistakes (extents, config); numerical failures roll the model back and are
/// reported through [`StepTelemetry::error`].
pub fn adapt_step(
    model: &mut Model,
    bank: &mut MemoryBank,
    batch: &TestBatch,
    step_index: usize,
    cfg: &AdaptConfig,
) -> Result<StepTelemetry> {
    cfg.validate()?;
    let x = &batch.features;
    if x.cols() != model.input_dim() {
        return dim_err(format!(
            "batch has {} features, model expects {}",
            x.cols(),
            model.input_dim()
        ));
    }
    if bank.capacity() != cfg.bank_capacity() {
        return dim_err(format!(
            "bank capacity {} does not match config ({})",
            bank.capacity(),
            cfg.bank_capacity()
        ));
    }
    let objective = cfg.objective.objective();
    let policy = cfg.norm_policy.resolve_for_batch(x.rows());
    let bank_size = bank.len();
    let mut telemetry = StepTelemetry {
        step_index,
        discrepancy: NO_DISCREPANCY,
        applied_lr: 0.0,
        tta_loss_before: 0.0,
        predictions: Vec::new(),
        probs: Matrix::zeros(0, 0),
        bank_size,
        severity_label: batch.severity_label.clone(),
        correct: None,
        error: None,
    };

    match cfg.method {
        Method::None => {
            let pass = model.forward(x, &NormPolicy::train_running())?;
            telemetry.tta_loss_before = objective.loss(&pass.probs)?;
            telemetry.predictions = predictions_of(&pass.probs);
            telemetry.probs = pass.probs;
            return Ok(telemetry);
        }
        Method::Ptbn => {
            let policy = if policy.mode == NormMode::TrainRunning {
                NormPolicy::test_batch().resolve_for_batch(x.rows())
            } else {
                policy
            };
            let pass = model.forward_mut(x, &policy)?;
            telemetry.tta_loss_before = objective.loss(&pass.probs)?;
            telemetry.predictions = predictions_of(&pass.probs);
            telemetry.probs = pass.probs;
            return Ok(telemetry);
        }
        Method::Fixed | Method::Dltta => {}
    }

    let before = model.clone();
    let pass0 = model.forward(x, &policy)?;
    telemetry.tta_loss_before = objective.loss(&pass0.probs)?;
    let outcome = (|| -> Result<ForwardPass> {
        let eta = match cfg.method {
            Method::Dltta => {
                match estimate_discrepancy(bank, &pass0, cfg.retrieval_size, cfg.similarity)? {
                    Some(per_sample) => {
                        let d = batch_discrepancy(&per_sample)?;
                        telemetry.discrepancy = d;
                        dynamic_lr(d, cfg.alpha)?
                    }
                    None => cfg.alpha,
                }
            }
            _ => cfg.alpha,
        };
        telemetry.applied_lr = eta;
        model.commit_running_stats(&pass0);
        let follow = follow_up_policy(policy);
        if eta > 0.0 && cfg.method.uses_gradient() {
            for k in 0..cfg.steps_per_batch {
                let fresh;
                let pass = if k == 0 {
                    &pass0
                } else {
                    fresh = model.forward(x, &follow)?;
                    &fresh
                };
                let g_logits = objective.grad_logits(&pass.logits)?;
                let grads = model.backward(pass, &g_logits)?;
                if !grads.is_finite() {
                    return Err(Error::NonFinite("gradient".into()));
                }
                model.sgd_step(&grads, eta)?;
            }
        }
        model.forward(x, &follow)
    })();

    match outcome {
        Ok(pass1) => {
            for (key, value) in pass1.features.row_iter().zip(pass1.probs.row_iter()) {
                bank.push(key, value)?;
            }
            telemetry.predictions = predictions_of(&pass1.probs);
            telemetry.probs = pass1.probs;
        }
        Err(e @ (Error::NonFinite(_) | Error::Domain(_))) => {
            *model = before;
            telemetry.error = Some(e.to_string());
            telemetry.predictions = predictions_of(&pass0.probs);
            telemetry.probs = pass0.probs;
        }
        Err(e) => {
            *model = before;
            return Err(e);
        }
    }
    Ok(telemetry)
}

/// Result of a full pass over a stream.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub telemetry: Vec<StepTelemetry>,
    pub metrics: Metrics,
    /// True when any step was aborted.
    pub flagged: bool,
}

/// Runs `adapt_step` over the first `horizon` batches (or all of them),
/// carrying model and bank state forward, then scores predictions against
/// the stream's labels. The model's adaptation mask is reset to
/// `cfg.adapt_scope` first.
pub fn run_stream(
    model: &mut Model,
    stream: ShiftStream,
    cfg: &AdaptConfig,
    horizon: Option<usize>,
    sink: &mut dyn TelemetrySink,
) -> Result<RunOutput> {
    cfg.validate()?;
    if horizon == Some(0) {
        return domain_err("horizon must be at least 1");
    }
    let mut stream = match horizon {
        Some(h) => stream.truncated(h),
        None => stream,
    };
    model.set_adapt_scope(cfg.adapt_scope);
    let mut bank = cfg.new_bank(model)?;
    let mut telemetry = Vec::with_capacity(stream.remaining());
    let mut step = 0;
    while let Some(batch) = stream.next_batch() {
        let t = adapt_step(model, &mut bank, &batch, step, cfg)?;
        sink.record(&t);
        telemetry.push(t);
        step += 1;
    }
    let labels = stream.into_labels();
    for (t, ys) in telemetry.iter_mut().zip(&labels) {
        t.correct = Some(t.predictions.iter().zip(ys).filter(|(p, y)| p == y).count());
    }
    let metrics = Metrics::from_telemetry(&telemetry, &labels)?;
    let flagged = telemetry.iter().any(|t| t.error.is_some());
    Ok(RunOutput {
        telemetry,
        metrics,
        flagged,
    })
}
