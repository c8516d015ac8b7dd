//! Adapt a source model along the default alternating-severity stream with
//! the dynamic learning rate and print how the rate follows the shift.

use dynamic_tta::engine::{run_stream, Method, StepTelemetry};
use dynamic_tta::harness::{RunConfig, Scenario};

fn main() -> dynamic_tta::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.method = Method::Dltta;
    let scenario = Scenario::build(&cfg, cfg.seed)?;
    let mut model = scenario.model.clone();

    let seg_len = cfg.segment_length;
    let mut seg: Vec<StepTelemetry> = Vec::new();
    let mut sink = |t: &StepTelemetry| {
        seg.push(t.clone());
        if seg.len() == seg_len {
            let lr: f64 = seg.iter().map(|t| t.applied_lr).sum::<f64>() / seg.len() as f64;
            let div: Vec<f64> = seg.iter().map(|t| t.discrepancy).filter(|d| *d >= 0.0).collect();
            println!(
                "steps {:>4}..{:<4} mean lr {:.5}  mean discrepancy {:.4}",
                t.step_index + 1 - seg_len,
                t.step_index,
                lr,
                div.iter().sum::<f64>() / div.len().max(1) as f64
            );
            seg.clear();
        }
    };
    let out = run_stream(&mut model, scenario.stream.clone(), &cfg.adapt_config(), None, &mut sink)?;

    let m = out.metrics;
    println!("streaming accuracy {:.4}, final accuracy {:.4}", m.streaming_accuracy, m.final_accuracy);
    for (label, acc) in &m.per_segment_accuracy {
        println!("  severity {label}: {acc:.4}");
    }
    println!(
        "lr min {:.5} mean {:.5} max {:.5}",
        m.lr_trace_summary.min, m.lr_trace_summary.mean, m.lr_trace_summary.max
    );
    Ok(())
}
