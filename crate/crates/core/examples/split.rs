//! Builds stratified and DGPS splits of a synthetic dataset.

use vader::splits::{dgps_split, stratified_split, DEFAULT_TEST_FRACTION};
use vader::synth::{generate_dataset, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_dataset(&DatasetConfig {
        n_passages: 60,
        axle_distribution: vec![(4, 0.5), (8, 0.3), (12, 0.2)],
        seed: 4,
        ..DatasetConfig::default()
    })?;
    println!("dataset: {:?}", ds.axle_count_histogram());

    let s = stratified_split(&ds, DEFAULT_TEST_FRACTION, 4)?;
    println!(
        "stratified: test {}, folds {:?}",
        s.test.len(),
        s.folds.iter().map(Vec::len).collect::<Vec<_>>()
    );
    let (train, val) = s.train_val(0)?;
    println!("fold 0: train {} / val {}", train.len(), val.len());

    let d = dgps_split(&ds, 4, None)?;
    println!("dgps: train/val pool {}, test {}", d.pool().len(), d.test.len());
    Ok(())
}
