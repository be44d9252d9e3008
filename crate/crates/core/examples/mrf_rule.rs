//! Trains two raw models that differ only in kernel size on one synthetic
//! split and compares their test F1.

use std::time::Instant;

use vader::data::Passage;
use vader::metrics::PeakConfig;
use vader::model::{Vader, VaderConfig};
use vader::mrf::HyperParams;
use vader::splits::stratified_split;
use vader::synth::{generate_dataset, BridgeConfig, DatasetConfig, SignalConfig};
use vader::train::{prepare_samples, train, validate, TrainOptions, TrainSchedule};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DatasetConfig {
        n_passages: env("N", 250),
        axle_distribution: vec![(4, 0.4), (8, 0.4), (12, 0.2)],
        bridge: BridgeConfig {
            sensor_positions: vec![8.2],
            ..BridgeConfig::default()
        },
        signal: SignalConfig {
            noise_std: env("NOISE", 0.1),
            click_amplitude: env("CLICK", 0.3),
            tail: env("TAIL", 0.5),
            ..SignalConfig::default()
        },
        seed: env("SEED", 1),
        ..DatasetConfig::default()
    };
    let ds = generate_dataset(&cfg)?;
    let split = stratified_split(&ds, 0.2, cfg.seed)?;
    let (train_ids, val_ids) = split.train_val(0)?;
    let pick = |ids: &[String]| -> Vec<&Passage> { ids.iter().filter_map(|id| ds.get(id)).collect() };
    let schedule = TrainSchedule {
        max_epochs: env("EPOCHS", 30),
        ..TrainSchedule::default()
    };
    let opts = TrainOptions {
        seed: cfg.seed,
        verbose: true,
        ..TrainOptions::default()
    };
    let kernels: Vec<usize> = std::env::var("KERNELS")
        .unwrap_or_else(|_| "9,3".into())
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    for k in kernels {
        let hyper = HyperParams::raw(k, 2, 4).with_base_width(env("WIDTH", 8));
        let vcfg = VaderConfig::new(hyper, 600.0).with_width_cap(env("CAP", 64));
        let probe = Vader::new(vcfg, 0)?;
        let tr = prepare_samples(&probe, &pick(&train_ids))?;
        let va = prepare_samples(&probe, &pick(&val_ids))?;
        let te = prepare_samples(&probe, &pick(&split.test))?;
        let start = Instant::now();
        let (model, history) = train(&vcfg, &tr, &va, &schedule, &opts)?;
        let (_, report) = validate(
            &model,
            &te,
            &TrainOptions {
                peaks: PeakConfig::default(),
                ..opts.clone()
            },
        )?;
        println!(
            "k={k} mrf={} epochs={} best={:?} test_f1_200={:.2} f1_37={:.2} time={:.1}s",
            model.mrf(),
            history.epochs.len(),
            history.best_epoch,
            report.f1_200,
            report.f1_37,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
