//! Computes the 16 x 6 spectrogram stack of a two-tone signal and shows
//! which scale responds most to each tone.

use std::f64::consts::PI;

use vader::cwt::{spectrogram_stack, STACK_SETTINGS};

fn main() {
    let fs = 600.0;
    let signal: Vec<f64> = (0..1200)
        .map(|i| {
            let t = i as f64 / fs;
            (2.0 * PI * 6.0 * t).sin() + 0.5 * (2.0 * PI * 60.0 * t).sin()
        })
        .collect();
    let stack = spectrogram_stack(&signal);
    println!(
        "shape {:?}, {} bytes vs {} raw",
        stack.shape(),
        stack.size_bytes(),
        signal.len() * 4
    );
    for (c, spec) in STACK_SETTINGS.iter().enumerate() {
        let energy: Vec<f32> = (0..16)
            .map(|s| (300..900).map(|t| stack.get(s, c, t).abs()).sum::<f32>())
            .collect();
        let best = (0..16).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        println!(
            "{:?} scales {}-{}: strongest row {best} ({:.1} Hz)",
            spec.family,
            spec.scale_lower,
            spec.scale_upper,
            spec.family.frequency_at(spec.scales()[best]) * fs
        );
    }
    let bytes = stack.to_bytes();
    assert_eq!(vader::cwt::SpectrogramStack::from_bytes(&bytes).as_ref(), Some(&stack));
}
