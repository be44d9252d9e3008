//! Generates a small synthetic dataset, writes it to disk and reads it back.

use vader::data::load_dataset;
use vader::synth::{write_dataset, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DatasetConfig {
        n_passages: 12,
        seed: 3,
        ..DatasetConfig::default()
    };
    let dir = tempfile::tempdir()?;
    let hist = write_dataset(&cfg, dir.path())?;
    println!("axle-count histogram: {hist:?}");

    let ds = load_dataset(dir.path())?;
    let p = &ds.passages[0];
    println!(
        "{}: {} axles, {} channels x {} samples at {} Hz",
        p.passage_id,
        p.axle_count,
        p.channels.len(),
        p.n_samples(),
        p.sample_rate()
    );
    let (idx, vel) = p.label_indices(0)?;
    println!(
        "first crossings on {}: {:?} at {:.4} m/sample",
        p.channels[0].sensor_id,
        &idx[..4],
        vel[0]
    );
    Ok(())
}
