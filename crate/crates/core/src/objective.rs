//! Test-time objectives. An objective supplies a scalar loss on the softmax
//! output and its gradient with respect to the logits; the engine pushes that
//! gradient through [`crate::model::Model::backward`].

use crate::error::{Error, Result};
use crate::numeric::{check_distribution, softmax, Matrix, PROB_EPS};

pub trait TtaObjective {
    fn name(&self) -> &'static str;
    fn loss(&self, probs: &Matrix) -> Result<f64>;
    fn grad_logits(&self, logits: &Matrix) -> Result<Matrix>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveKind {
    #[default]
    Entropy,
}

impl ObjectiveKind {
    pub fn objective(self) -> &'static dyn TtaObjective {
        match self {
            ObjectiveKind::Entropy => &Entropy,
        }
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(Self::Entropy),
            other => Err(Error::Config(format!(
                "unknown objective {other:?} (only \"entropy\" is available)"
            ))),
        }
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("entropy")
    }
}

/// Mean Shannon entropy of the predicted distributions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Entropy;

impl TtaObjective for Entropy {
    fn name(&self) -> &'static str {
        "entropy"
    }

    fn loss(&self, probs: &Matrix) -> Result<f64> {
        entropy_loss(probs)
    }

    fn grad_logits(&self, logits: &Matrix) -> Result<Matrix> {
        entropy_loss_grad(logits)
    }
}

/// Mean over rows of `-Σ p ln p` (nats), with `p` clamped below at 1e-7 inside the log.
pub fn entropy_loss(probs: &Matrix) -> Result<f64> {
    if probs.rows() == 0 {
        return Err(Error::Dimension("entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for row in probs.row_iter() {
        check_distribution(row)?;
        total -= row.iter().map(|&p| p * p.max(PROB_EPS).ln()).sum::<f64>();
    }
    Ok(total / probs.rows() as f64)
}

/// Gradient of the mean softmax entropy with respect to the logits.
///
/// For one row with `p = softmax(z)` and `H = -Σ p ln p`:
/// `∂H/∂z_k = -p_k (ln p_k + H)`. Rows are scaled by `1/B` for the mean.
/// Logs use the exact softmax (computed as `z - logsumexp`), not the clamped
/// value, so the gradient is that of the smooth function.
pub fn entropy_loss_grad(logits: &Matrix) -> Result<Matrix> {
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    let probs = softmax(logits)?;
    let b = logits.rows() as f64;
    let c = logits.cols();
    let mut out = Vec::with_capacity(logits.rows() * c);
    for (z, p) in logits.row_iter().zip(probs.row_iter()) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let log_p: Vec<f64> = z.iter().map(|&v| v - lse).collect();
        let h: f64 = -p.iter().zip(&log_p).map(|(a, l)| a * l).sum::<f64>();
        out.extend(p.iter().zip(&log_p).map(|(&pk, &lk)| -pk * (lk + h) / b));
    }
    Matrix::new(logits.rows(), c, out)
}
