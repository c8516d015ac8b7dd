//! Final accuracy of the fixed and dynamic rates across a grid of initial
//! rates. A smaller spread across the grid means less sensitivity to the
//! choice of rate.

use dynamic_tta::engine::Method;
use dynamic_tta::harness::experiments::{build_scenarios, sweep_lr};
use dynamic_tta::harness::RunConfig;

fn main() -> dynamic_tta::Result<()> {
    let cfg = RunConfig::default();
    let scenarios = build_scenarios(&cfg, &[0, 1, 2], None)?;
    let grid = [0.25, 1.0, 4.0, 16.0];
    let sweep = sweep_lr(&cfg, &scenarios, &[Method::Fixed, Method::Dltta], &grid)?;
    for p in &sweep.points {
        println!("{:<6} alpha {:<6} final accuracy {:.4}", p.method.as_str(), p.alpha, p.mean_final_accuracy);
    }
    for (method, std) in &sweep.grid_std {
        println!("{method}: std across the grid {std:.4}");
    }
    Ok(())
}
