//! Train a source model on the synthetic task, save it and check it on a
//! held-out sample from the same distribution.
//!
//! cargo run --release --example train_source -- [seed] [out.bin]

use dynamic_tta::harness::scenario::{accuracy_on, trained_model, validation_set};
use dynamic_tta::harness::RunConfig;
use dynamic_tta::model::{load_model, save_model};

fn main() -> dynamic_tta::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let path = args.next().unwrap_or_else(|| "source_model.bin".into());

    let cfg = RunConfig::default();
    let (model, data, log) = trained_model(&cfg, seed)?;
    for e in log.iter().step_by(5).chain(log.last()) {
        println!("epoch {:>2}  loss {:.4}  acc {:.4}", e.epoch, e.loss, e.accuracy);
    }
    let held_out = validation_set(&cfg, seed, 1000)?;
    println!(
        "trained on {} samples; held-out accuracy {:.4}",
        data.len(),
        accuracy_on(&model, &held_out)?
    );

    save_model(&model, &path)?;
    assert_eq!(load_model(&path)?, model);
    println!("saved {path} ({} parameters, {} adaptable)", model.n_params(), model.n_adaptable());
    Ok(())
}
