//! The memory bank on its own: FIFO eviction, nearest-neighbour retrieval,
//! the reference prediction and the resulting learning rate.

use dynamic_tta::engine::dynamic_lr;
use dynamic_tta::memory::{reference_prediction, sample_discrepancy, MemoryBank, Similarity};

fn main() -> dynamic_tta::Result<()> {
    let mut bank = MemoryBank::new(4, 2, 3)?;
    let stored: [([f64; 2], [f64; 3]); 5] = [
        ([0.0, 0.0], [0.90, 0.05, 0.05]),
        ([1.0, 0.0], [0.80, 0.10, 0.10]),
        ([0.0, 1.0], [0.70, 0.20, 0.10]),
        ([5.0, 5.0], [0.05, 0.05, 0.90]),
        ([0.5, 0.5], [0.60, 0.30, 0.10]),
    ];
    for (key, value) in &stored {
        bank.push(key, value)?;
    }
    // capacity 4: the first entry is gone
    let kept: Vec<u64> = bank.entries().map(|e| e.insert_index).collect();
    println!("bank holds entries {kept:?}");

    let query = [0.4, 0.4];
    let support = bank.retrieve(&query, 3, Similarity::L2)?.expect("bank is not empty");
    println!("nearest to {query:?}: {:?}", support.indices());
    let reference = reference_prediction(&support)?;
    println!("reference prediction {reference:.3?}");

    let alpha = 0.05;
    for prediction in [[0.65, 0.25, 0.10], [0.10, 0.10, 0.80]] {
        let div = sample_discrepancy(&reference, &prediction)?;
        println!(
            "prediction {prediction:?}: discrepancy {div:.4}, learning rate {:.5}",
            dynamic_lr(div, alpha)?
        );
    }
    Ok(())
}
