use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::StepTelemetry;
use crate::error::{dim_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: usize,
    pub streaming_accuracy: f64,
    /// Keyed by severity tag.
    pub per_segment_accuracy: BTreeMap<String, f64>,
    /// Mean absolute step-to-step change of the test objective.
    pub loss_smoothness: f64,
    pub lr_trace_summary: LrSummary,
    /// Accuracy over the last 20% of steps.
    pub final_accuracy: f64,
    pub aborted_steps: usize,
}

/// Fraction of the horizon scored by `final_accuracy`.
pub const FINAL_FRACTION: f64 = 0.2;

impl Metrics {
    pub fn from_telemetry(telemetry: &[StepTelemetry], labels: &[Vec<usize>]) -> Result<Self> {
        if telemetry.len() != labels.len() {
            return dim_err(format!(
                "{} telemetry records for {} labelled batches",
                telemetry.len(),
                labels.len()
            ));
        }
        let correct: Vec<usize> = telemetry
            .iter()
            .zip(labels)
            .map(|(t, ys)| t.predictions.iter().zip(ys).filter(|(p, y)| p == y).count())
            .collect();
        let sizes: Vec<usize> = labels.iter().map(Vec::len).collect();
        let frac = |range: std::ops::Range<usize>| {
            let n: usize = sizes[range.clone()].iter().sum();
            let c: usize = correct[range].iter().sum();
            if n == 0 {
                0.0
            } else {
                c as f64 / n as f64
            }
        };
        let steps = telemetry.len();
        let n_final = ((steps as f64 * FINAL_FRACTION).ceil() as usize).clamp(1.min(steps), steps);

        let mut seg: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for ((t, &c), &n) in telemetry.iter().zip(&correct).zip(&sizes) {
            let e = seg.entry(t.severity_label.clone()).or_default();
            e.0 += c;
            e.1 += n;
        }

        let losses: Vec<f64> = telemetry.iter().map(|t| t.tta_loss_before).collect();
        let loss_smoothness = if losses.len() < 2 {
            0.0
        } else {
            losses.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (losses.len() - 1) as f64
        };

        let lrs: Vec<f64> = telemetry.iter().map(|t| t.applied_lr).collect();
        let lr_trace_summary = if lrs.is_empty() {
            LrSummary { min: 0.0, mean: 0.0, max: 0.0 }
        } else {
            let min = lrs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = lrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // summation rounding can push a constant trace's mean past its max
            let mean = (lrs.iter().sum::<f64>() / lrs.len() as f64).clamp(min, max);
            LrSummary { min, mean, max }
        };

        Ok(Self {
            steps,
            streaming_accuracy: frac(0..steps),
            per_segment_accuracy: seg
                .into_iter()
                .map(|(k, (c, n))| (k, if n == 0 { 0.0 } else { c as f64 / n as f64 }))
                .collect(),
            loss_smoothness,
            lr_trace_summary,
            final_accuracy: frac(steps - n_final..steps),
            aborted_steps: telemetry.iter().filter(|t| t.error.is_some()).count(),
        })
    }
}
