//! Dynamic-rate accuracy as a function of the number of retrieved neighbours.

use dynamic_tta::harness::experiments::{build_scenarios, retrieval_sweep};
use dynamic_tta::harness::RunConfig;

fn main() -> dynamic_tta::Result<()> {
    let cfg = RunConfig::default();
    let scenarios = build_scenarios(&cfg, &[0, 1], None)?;
    let sweep = retrieval_sweep(&cfg, &scenarios, &cfg.retrieval_sizes)?;
    for p in &sweep.points {
        println!(
            "D = {:>3}: final {:.4} streaming {:.4}",
            p.retrieval_size, p.mean_final_accuracy, p.mean_streaming_accuracy
        );
    }
    Ok(())
}
