//! Runs an (untrained) model over a synthetic passage and picks peaks from
//! its probability output. Train first for meaningful detections.

use vader::metrics::{pick_peaks, PeakConfig};
use vader::model::{Vader, VaderConfig};
use vader::mrf::HyperParams;
use vader::synth::{generate_passage, BridgeConfig, SignalConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bridge = BridgeConfig::default();
    let train = TrainConfig {
        axle_offsets: vec![0.0, 2.5, 17.5, 20.0],
        speed: 30.0,
        load_scale: vec![1.0; 4],
    };
    let p = generate_passage("demo", &bridge, &train, &SignalConfig::default(), 7)?;
    let cfg = VaderConfig::new(HyperParams::raw(9, 2, 4).with_base_width(8), 600.0).with_width_cap(64);
    let model = Vader::new(cfg, 7)?;
    for (ci, ch) in p.channels.iter().enumerate() {
        let probs = model.infer(&ch.samples)?;
        let peaks = pick_peaks(&probs, &PeakConfig::default());
        let (truth, _) = p.label_indices(ci)?;
        println!(
            "{}: {} samples, truth {:?}, detected {} peaks",
            ch.sensor_id,
            probs.len(),
            truth,
            peaks.len()
        );
    }
    Ok(())
}
