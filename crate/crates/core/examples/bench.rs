//! Times raw inference against CWT plus spectrogram inference on one signal.
//!
//! `SAMPLES` (default 7200) sets the signal length.

use vader::cli::run_bench;
use vader::mrf::HyperParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = std::env::var("SAMPLES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(7200);
    let r = run_bench(HyperParams::raw(9, 2, 4), 256, n, 3, 0)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}
