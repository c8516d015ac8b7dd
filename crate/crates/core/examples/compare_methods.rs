//! All four methods on the same scenarios.

use dynamic_tta::engine::Method;
use dynamic_tta::harness::experiments::{build_scenarios, compare, mean_by_method};
use dynamic_tta::harness::RunConfig;

fn main() -> dynamic_tta::Result<()> {
    let cfg = RunConfig::default();
    let scenarios = build_scenarios(&cfg, &[0, 1, 2], None)?;
    let cells = compare(&cfg, &scenarios, &Method::ALL)?;
    println!("{:<6} {:>10} {:>10} {:>10}", "method", "streaming", "final", "smooth");
    for (method, s) in mean_by_method(&cells) {
        println!(
            "{:<6} {:>10.4} {:>10.4} {:>10.5}",
            method.as_str(),
            s.streaming_accuracy,
            s.final_accuracy,
            s.loss_smoothness
        );
    }
    Ok(())
}
