//! Experiment drivers: method comparison, learning-rate grid, order
//! shuffles, retrieval-size sweep and update-count study.
//!
//! Every (method, rate, seed, ...) cell runs on its own copy of the model and
//! stream, so cells run in parallel; results are collected in a fixed order.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::engine::{run_stream, AdaptConfig, Method, NullSink, RunOutput};
use crate::error::{domain_err, Result};
use crate::metrics::Metrics;
use crate::model::Model;
use crate::numeric::{mean, std_dev};
use crate::stream::{mix_seed, ShiftStream};

use super::config::RunConfig;
use super::output::{fmt_f64, Table, ORDER_SUMMARY, RETRIEVAL_SUMMARY, RUNS, SWEEP_SUMMARY};
use super::scenario::Scenario;

/// One finished run and the settings that distinguish it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub alpha: f64,
    pub retrieval_size: usize,
    pub steps_per_batch: usize,
    pub seed: u64,
    /// Order index for shuffled runs.
    pub order: Option<usize>,
    pub metrics: Metrics,
}

/// Scenarios for each seed, trained in parallel. With `model`, every seed
/// adapts that model instead of training its own.
pub fn build_scenarios(cfg: &RunConfig, seeds: &[u64], model: Option<&Model>) -> Result<Vec<Scenario>> {
    if seeds.is_empty() {
        return domain_err("seed list is empty");
    }
    seeds
        .par_iter()
        .map(|&s| match model {
            Some(m) => Scenario::with_model(cfg, s, m.clone()),
            None => Scenario::build(cfg, s),
        })
        .collect()
}

/// Full run of `acfg` on a copy of the scenario.
pub fn run_one(scenario: &Scenario, stream: ShiftStream, acfg: &AdaptConfig) -> Result<RunOutput> {
    let mut model = scenario.model.clone();
    run_stream(&mut model, stream, acfg, None, &mut NullSink)
}

struct Job<'a> {
    scenario: &'a Scenario,
    acfg: AdaptConfig,
    order: Option<(usize, u64)>,
}

fn run_jobs(jobs: Vec<Job<'_>>) -> Result<Vec<Cell>> {
    jobs.into_par_iter()
        .map(|job| {
            let stream = match job.order {
                Some((_, order_seed)) => job.scenario.stream.shuffled(order_seed),
                None => job.scenario.stream.clone(),
            };
            let out = run_one(job.scenario, stream, &job.acfg)?;
            Ok(Cell {
                method: job.acfg.method,
                alpha: job.acfg.alpha,
                retrieval_size: job.acfg.retrieval_size,
                steps_per_batch: job.acfg.steps_per_batch,
                seed: job.scenario.seed,
                order: job.order.map(|(k, _)| k),
                metrics: out.metrics,
            })
        })
        .collect()
}

fn job<'a>(scenario: &'a Scenario, acfg: AdaptConfig) -> Job<'a> {
    Job {
        scenario,
        acfg,
        order: None,
    }
}

/// Each method at the configured rate on every scenario.
pub fn compare(cfg: &RunConfig, scenarios: &[Scenario], methods: &[Method]) -> Result<Vec<Cell>> {
    let mut jobs = Vec::new();
    for &method in methods {
        for sc in scenarios {
            let mut acfg = cfg.adapt_config();
            acfg.method = method;
            jobs.push(job(sc, acfg));
        }
    }
    run_jobs(jobs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub method: Method,
    pub alpha: f64,
    pub mean_final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
    /// Seed-averaged final accuracy per (method, rate), grid order.
    pub points: Vec<GridPoint>,
    /// Population std of the grid means, per method.
    pub grid_std: BTreeMap<String, f64>,
}

impl SweepResult {
    pub fn means(&self, method: Method) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.method == method)
            .map(|p| p.mean_final_accuracy)
            .collect()
    }

    pub fn summary_table(&self) -> Result<Table> {
        let mut t = Table::new(SWEEP_SUMMARY);
        for p in &self.points {
            t.push(vec![
                p.method.to_string(),
                fmt_f64(p.alpha),
                fmt_f64(p.mean_final_accuracy),
                fmt_f64(self.grid_std[p.method.as_str()]),
            ])?;
        }
        Ok(t)
    }
}

/// Every method at `cfg.alpha * m` for each multiplier `m`, on every scenario.
pub fn sweep_lr(
    cfg: &RunConfig,
    scenarios: &[Scenario],
    methods: &[Method],
    multipliers: &[f64],
) -> Result<SweepResult> {
    if multipliers.is_empty() {
        return domain_err("learning-rate grid is empty");
    }
    let mut jobs = Vec::new();
    for &method in methods {
        for &m in multipliers {
            for sc in scenarios {
                let mut acfg = cfg.adapt_config();
                acfg.method = method;
                acfg.alpha = cfg.alpha * m;
                jobs.push(job(sc, acfg));
            }
        }
    }
    let cells = run_jobs(jobs)?;
    let mut points = Vec::new();
    let mut grid_std = BTreeMap::new();
    for (mi, &method) in methods.iter().enumerate() {
        let mut means = Vec::new();
        for (ai, &m) in multipliers.iter().enumerate() {
            let start = (mi * multipliers.len() + ai) * scenarios.len();
            let accs: Vec<f64> = cells[start..start + scenarios.len()]
                .iter()
                .map(|c| c.metrics.final_accuracy)
                .collect();
            let mean_acc = mean(&accs).unwrap_or(0.0);
            means.push(mean_acc);
            points.push(GridPoint {
                method,
                alpha: cfg.alpha * m,
                mean_final_accuracy: mean_acc,
            });
        }
        grid_std.insert(method.to_string(), std_dev(&means).unwrap_or(0.0));
    }
    Ok(SweepResult {
        cells,
        points,
        grid_std,
    })
}

/// Seed of shuffled order `k` for a scenario seed.
pub fn order_seed(seed: u64, k: usize) -> u64 {
    mix_seed(seed, 0x0dde_0000 + k as u64)
}

/// Order-independent digest of a stream's content: the sorted per-batch
/// SHA-256 digests, hashed again.
pub fn batch_checksum(stream: &ShiftStream) -> String {
    let mut digests: Vec<[u8; 32]> = stream
        .batches()
        .iter()
        .zip(stream.labels())
        .map(|(b, ys)| {
            let mut h = Sha256::new();
            for v in b.features.data() {
                h.update(v.to_le_bytes());
            }
            for &y in ys {
                h.update((y as u64).to_le_bytes());
            }
            h.update(b.severity_label.as_bytes());
            h.finalize().into()
        })
        .collect();
    digests.sort_unstable();
    let mut h = Sha256::new();
    for d in &digests {
        h.update(d);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderResult {
    pub order: usize,
    /// Order seed of the first scenario.
    pub order_seed: u64,
    /// Mean over scenarios.
    pub final_accuracy: f64,
    /// Content digest of the first scenario's shuffled stream.
    pub batch_checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudy {
    pub cells: Vec<Cell>,
    pub orders: Vec<OrderResult>,
    /// Population std of the per-order accuracies.
    pub std: f64,
}

impl OrderStudy {
    pub fn summary_table(&self) -> Result<Table> {
        let mut t = Table::new(ORDER_SUMMARY);
        for o in &self.orders {
            t.push(vec![
                o.order.to_string(),
                o.order_seed.to_string(),
                fmt_f64(o.final_accuracy),
                o.batch_checksum.clone(),
            ])?;
        }
        Ok(t)
    }
}

/// `method` on `n_orders` batch-level shuffles of each scenario's stream.
pub fn order_study(
    cfg: &RunConfig,
    scenarios: &[Scenario],
    method: Method,
    n_orders: usize,
) -> Result<OrderStudy> {
    let seeds: Vec<Vec<u64>> = scenarios
        .iter()
        .map(|sc| (0..n_orders).map(|k| order_seed(sc.seed, k)).collect())
        .collect();
    order_study_with_seeds(cfg, scenarios, method, &seeds)
}

/// As [`order_study`], with explicit order seeds per scenario
/// (`order_seeds[scenario][order]`).
pub fn order_study_with_seeds(
    cfg: &RunConfig,
    scenarios: &[Scenario],
    method: Method,
    order_seeds: &[Vec<u64>],
) -> Result<OrderStudy> {
    let n_orders = order_seeds.first().map_or(0, Vec::len);
    if n_orders < 2 {
        return domain_err("order study needs at least two orders");
    }
    if order_seeds.len() != scenarios.len() || order_seeds.iter().any(|s| s.len() != n_orders) {
        return domain_err("need the same number of order seeds for every scenario");
    }
    let mut jobs = Vec::new();
    for k in 0..n_orders {
        for (sc, seeds) in scenarios.iter().zip(order_seeds) {
            let mut acfg = cfg.adapt_config();
            acfg.method = method;
            jobs.push(Job {
                scenario: sc,
                acfg,
                order: Some((k, seeds[k])),
            });
        }
    }
    let cells = run_jobs(jobs)?;
    let mut orders = Vec::new();
    for k in 0..n_orders {
        let accs: Vec<f64> = cells[k * scenarios.len()..(k + 1) * scenarios.len()]
            .iter()
            .map(|c| c.metrics.final_accuracy)
            .collect();
        let first = order_seeds[0][k];
        orders.push(OrderResult {
            order: k,
            order_seed: first,
            final_accuracy: mean(&accs).unwrap_or(0.0),
            batch_checksum: batch_checksum(&scenarios[0].stream.shuffled(first)),
        });
    }
    let accs: Vec<f64> = orders.iter().map(|o| o.final_accuracy).collect();
    Ok(OrderStudy {
        cells,
        orders,
        std: std_dev(&accs).unwrap_or(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalPoint {
    pub retrieval_size: usize,
    pub mean_final_accuracy: f64,
    pub mean_streaming_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSweep {
    pub cells: Vec<Cell>,
    pub points: Vec<RetrievalPoint>,
}

impl RetrievalSweep {
    pub fn summary_table(&self) -> Result<Table> {
        let mut t = Table::new(RETRIEVAL_SUMMARY);
        for p in &self.points {
            t.push(vec![
                p.retrieval_size.to_string(),
                fmt_f64(p.mean_final_accuracy),
                fmt_f64(p.mean_streaming_accuracy),
            ])?;
        }
        Ok(t)
    }
}

/// One dynamic-rate run per retrieval size and scenario.
pub fn retrieval_sweep(cfg: &RunConfig, scenarios: &[Scenario], d_values: &[usize]) -> Result<RetrievalSweep> {
    if d_values.is_empty() {
        return domain_err("retrieval size list is empty");
    }
    let mut jobs = Vec::new();
    for &d in d_values {
        for sc in scenarios {
            let mut acfg = cfg.adapt_config();
            acfg.method = Method::Dltta;
            acfg.retrieval_size = d;
            jobs.push(job(sc, acfg));
        }
    }
    let cells = run_jobs(jobs)?;
    let points = d_values
        .iter()
        .zip(cells.chunks(scenarios.len()))
        .map(|(&d, group)| {
            let fin: Vec<f64> = group.iter().map(|c| c.metrics.final_accuracy).collect();
            let streaming: Vec<f64> = group.iter().map(|c| c.metrics.streaming_accuracy).collect();
            RetrievalPoint {
                retrieval_size: d,
                mean_final_accuracy: mean(&fin).unwrap_or(0.0),
                mean_streaming_accuracy: mean(&streaming).unwrap_or(0.0),
            }
        })
        .collect();
    Ok(RetrievalSweep { cells, points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepsPoint {
    pub steps_per_batch: usize,
    pub mean_final_accuracy: f64,
    /// Wall time of the sequential runs for this setting.
    pub elapsed: Duration,
}

/// `method` with each update count, run sequentially so the timings are
/// comparable.
pub fn steps_study(
    cfg: &RunConfig,
    scenarios: &[Scenario],
    method: Method,
    steps: &[usize],
) -> Result<Vec<StepsPoint>> {
    let mut out = Vec::new();
    for &k in steps {
        let mut acfg = cfg.adapt_config();
        acfg.method = method;
        acfg.steps_per_batch = k;
        let start = Instant::now();
        let mut accs = Vec::new();
        for sc in scenarios {
            accs.push(run_one(sc, sc.stream.clone(), &acfg)?.metrics.final_accuracy);
        }
        out.push(StepsPoint {
            steps_per_batch: k,
            mean_final_accuracy: mean(&accs).unwrap_or(0.0),
            elapsed: start.elapsed(),
        });
    }
    Ok(out)
}

/// One row per cell.
pub fn runs_table(cells: &[Cell]) -> Result<Table> {
    let mut t = Table::new(RUNS);
    for c in cells {
        t.push(vec![
            c.method.to_string(),
            fmt_f64(c.alpha),
            c.retrieval_size.to_string(),
            c.steps_per_batch.to_string(),
            c.seed.to_string(),
            c.order.map_or_else(String::new, |o| o.to_string()),
            fmt_f64(c.metrics.streaming_accuracy),
            fmt_f64(c.metrics.final_accuracy),
            fmt_f64(c.metrics.loss_smoothness),
            fmt_f64(c.metrics.lr_trace_summary.mean),
            c.metrics.aborted_steps.to_string(),
        ])?;
    }
    Ok(t)
}

/// Seed-averaged metrics per method, in first-seen order.
pub fn mean_by_method(cells: &[Cell]) -> Vec<(Method, MethodSummary)> {
    let mut order: Vec<Method> = Vec::new();
    for c in cells {
        if !order.contains(&c.method) {
            order.push(c.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let group: Vec<&Cell> = cells.iter().filter(|c| c.method == m).collect();
            let avg = |f: &dyn Fn(&Metrics) -> f64| {
                mean(&group.iter().map(|c| f(&c.metrics)).collect::<Vec<_>>()).unwrap_or(0.0)
            };
            (
                m,
                MethodSummary {
                    runs: group.len(),
                    streaming_accuracy: avg(&|x| x.streaming_accuracy),
                    final_accuracy: avg(&|x| x.final_accuracy),
                    loss_smoothness: avg(&|x| x.loss_smoothness),
                    lr_mean: avg(&|x| x.lr_trace_summary.mean),
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub runs: usize,
    pub streaming_accuracy: f64,
    pub final_accuracy: f64,
    pub loss_smoothness: f64,
    pub lr_mean: f64,
}
