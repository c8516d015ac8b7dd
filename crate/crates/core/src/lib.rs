//! Test-time adaptation with a dynamic, discrepancy-driven learning rate.
//!
//! A small BatchNorm classifier is trained on a synthetic source task and then
//! adapted online to a stream of unlabelled, shifted test batches. The dynamic
//! method keeps a FIFO memory of recent (feature, prediction) pairs, measures
//! how far each new prediction is from the predictions of its nearest stored
//! neighbours, and scales the step size of an entropy-minimisation update by
//! that discrepancy. Fixed-rate, normalisation-only and no-adaptation
//! baselines share the same loop.
//!
//! | module | contents |
//! |---|---|
//! | [`numeric`] | dense arrays, softmax, KL, distances |
//! | [`model`] | classifier, gradients, SGD, source training, model file |
//! | [`objective`] | test-time objectives (entropy) |
//! | [`memory`] | memory bank, retrieval, discrepancy |
//! | [`engine`] | adaptation step and stream runner |
//! | [`stream`] | synthetic source data and shifted test streams |
//! | [`metrics`] | run metrics |
//! | [`harness`] | config files, experiment drivers, CSV/JSON output, CLI |

pub mod engine;
pub mod error;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod objective;
pub mod stream;

pub use engine::{adapt_step, dynamic_lr, run_stream, AdaptConfig, Method, RunOutput, StepTelemetry};
pub use error::{Error, Result};
pub use memory::{MemoryBank, Similarity};
pub use metrics::Metrics;
pub use model::{Model, ModelSpec, NormPolicy};
pub use numeric::Matrix;
pub use stream::{ShiftStream, SourceSpec};
