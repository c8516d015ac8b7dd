//! The same test batches in shuffled orders.

use dynamic_tta::engine::Method;
use dynamic_tta::harness::experiments::{build_scenarios, order_study};
use dynamic_tta::harness::RunConfig;

fn main() -> dynamic_tta::Result<()> {
    let cfg = RunConfig::default();
    let scenarios = build_scenarios(&cfg, &[cfg.seed], None)?;
    let study = order_study(&cfg, &scenarios, Method::Dltta, 5)?;
    for o in &study.orders {
        println!(
            "order {} (seed {:#x}) final accuracy {:.4} content {}",
            o.order,
            o.order_seed,
            o.final_accuracy,
            &o.batch_checksum[..16]
        );
    }
    println!("std across orders {:.4}", study.std);
    Ok(())
}
