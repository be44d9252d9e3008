//! Trains a small raw model on one fold of a synthetic dataset and saves it.
//!
//! `EPOCHS` (default 8) sets the epoch budget.

use vader::model::{Vader, VaderConfig};
use vader::mrf::HyperParams;
use vader::splits::stratified_split;
use vader::synth::{generate_dataset, BridgeConfig, DatasetConfig};
use vader::train::{prepare_samples, train, TrainOptions, TrainSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_dataset(&DatasetConfig {
        n_passages: 40,
        axle_distribution: vec![(4, 0.5), (8, 0.5)],
        bridge: BridgeConfig {
            sensor_positions: vec![8.2],
            ..BridgeConfig::default()
        },
        seed: 5,
        ..DatasetConfig::default()
    })?;
    let split = stratified_split(&ds, 0.2, 5)?;
    let (train_ids, val_ids) = split.train_val(0)?;

    let hyper = HyperParams::raw(9, 2, 4).with_base_width(8);
    let cfg = VaderConfig::new(hyper, 600.0).with_width_cap(64);
    let probe = Vader::new(cfg, 0)?;
    println!("mrf {} ({} parameters)", probe.mrf(), probe.network.parameter_count());
    let tr = prepare_samples(&probe, &ds.select(&train_ids))?;
    let va = prepare_samples(&probe, &ds.select(&val_ids))?;

    let schedule = TrainSchedule {
        max_epochs: std::env::var("EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(8),
        ..TrainSchedule::default()
    };
    let opts = TrainOptions {
        seed: 5,
        verbose: true,
        ..TrainOptions::default()
    };
    let (model, history) = train(&cfg, &tr, &va, &schedule, &opts)?;
    print!("{}", history.to_csv());

    let dir = tempfile::tempdir()?;
    let base = dir.path().join("model");
    model.save(&base)?;
    let back = Vader::load(&base)?;
    assert_eq!(
        back.infer(&ds.passages[0].channels[0].samples)?,
        model.infer(&ds.passages[0].channels[0].samples)?
    );
    println!("saved and reloaded {}", base.display());
    Ok(())
}
