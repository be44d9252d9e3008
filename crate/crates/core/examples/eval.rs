//! Scores hand-made probability series against labelled crossings, the same
//! way trained models are evaluated.

use vader::metrics::{harmonic_mean, Evaluator, PeakConfig};

fn bump(n: usize, centres: &[usize], height: f64) -> Vec<f64> {
    (0..n)
        .map(|t| {
            centres
                .iter()
                .map(|&c| height * (-((t as f64 - c as f64) / 3.0).powi(2)).exp())
                .fold(0.01, f64::max)
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels = [100, 160, 400, 460];
    let velocity = 30.0 / 600.0;
    let mut ev = Evaluator::new();
    let cfg = PeakConfig::default();
    // close on s0, one miss and one late peak on s1
    ev.add(
        "s0",
        &bump(600, &[101, 159, 401, 460], 0.9),
        &labels,
        &[velocity; 4],
        &cfg,
    )?;
    ev.add("s1", &bump(600, &[100, 170, 460], 0.8), &labels, &[velocity; 4], &cfg)?;
    let r = ev.report();
    println!("{}", serde_json::to_string_pretty(&r)?);
    print!("{}", r.per_sensor_csv());
    if let Some(msa) = r.msa {
        println!("harmonic mean of F1 and MSA: {:.2}", harmonic_mean(&[r.f1_200, msa])?);
    }
    Ok(())
}
