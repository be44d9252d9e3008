//! Classifies a small hyperparameter grid by comparing each network's
//! maximum receptive field with the object sizes of the bridge.

use vader::mrf::{object_size, plan_grid, summarize, GridAxes, MrfClass, PlanThresholds};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let th = PlanThresholds {
        sample_rate: 600.0,
        f_low_certain: 5.0,
        f_low_useful: 1.0,
    };
    println!(
        "object size at 6.9 Hz: {}, at 5 Hz: {}",
        object_size(600.0, 6.9)?,
        object_size(600.0, 5.0)?
    );
    let axes = GridAxes {
        kernel_sizes: vec![3, 5, 9, 17],
        pool_sizes: vec![2, 3],
        pool_steps: vec![3, 4],
        ..GridAxes::default()
    };
    let entries = plan_grid(&axes, &th)?;
    for e in entries.iter().filter(|e| e.classification != MrfClass::Invalid) {
        println!(
            "{:>12} k={:<2} m={} p={} mrf={:<5} {:?}",
            e.hyper.input_kind, e.hyper.kernel_size, e.hyper.pool_size, e.hyper.pool_steps, e.mrf, e.classification
        );
    }
    let s = summarize(&entries, &th)?;
    println!(
        "{} combinations: {} underfit, {} ok, {} beyond useful, {} invalid",
        s.total, s.underfit, s.ok, s.beyond_useful, s.invalid
    );
    Ok(())
}
