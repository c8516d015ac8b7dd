//! Write telemetry for two methods and generate the plot script for them.
//!
//! cargo run --release --example emit_plots -- [out_dir]

use std::path::PathBuf;

use dynamic_tta::engine::{run_stream, Method};
use dynamic_tta::harness::output::telemetry_table;
use dynamic_tta::harness::plots::emit_plots;
use dynamic_tta::harness::{RunConfig, Scenario};

fn main() -> dynamic_tta::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "plots".into()));
    std::fs::create_dir_all(&out)?;
    let mut cfg = RunConfig::default();
    cfg.n_segments = 4;
    let scenario = Scenario::build(&cfg, 0)?;

    let mut csvs = Vec::new();
    for method in [Method::Fixed, Method::Dltta] {
        cfg.method = method;
        let mut model = scenario.model.clone();
        let mut tel = Vec::new();
        run_stream(&mut model, scenario.stream.clone(), &cfg.adapt_config(), None, &mut tel)?;
        let path = out.join(format!("telemetry_{method}.csv"));
        telemetry_table(method, &tel)?.save(&path)?;
        csvs.push(path);
    }
    for script in emit_plots(&csvs, &out)? {
        println!("wrote {}; run it with python3 from {}", script.display(), out.display());
    }
    Ok(())
}
