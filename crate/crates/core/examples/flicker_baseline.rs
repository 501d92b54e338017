//! Flicker loss detection: threshold sweep and misses by onset round.
//!
//! Usage: `flicker_baseline [d] [T] [p] [shots] [seed]`

use rayon::prelude::*;

use qloss::experiment::{sample_dataset, NoiseParams};
use qloss::flicker::{calibrate_background, flicker_scores};
use qloss::lattice::{build_layout, Basis};
use qloss::metrics::{miss_analysis, threshold_sweep, uniform_grid};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> qloss::Result<()> {
    let d: usize = arg(1, 3);
    let t: usize = arg(2, 10);
    let p: f64 = arg(3, 0.005);
    let shots: usize = arg(4, 5000);
    let seed: u64 = arg(5, 7);

    let layout = build_layout(d)?;
    let noise = NoiseParams::uniform(p)?;
    let b = calibrate_background(&layout, noise, t, Basis::Z, 2000, seed ^ 0xb)?;
    println!("background click rate {b:.5}");

    let data = sample_dataset(&layout, noise, t, Basis::Z, shots, seed)?;
    let probs: Vec<Vec<f64>> = data
        .shots
        .par_iter()
        .map(|s| flicker_scores(&s.detectors, &layout, Basis::Z, b).and_then(|sc| sc.final_probabilities(p)))
        .collect::<qloss::Result<_>>()?;

    println!("threshold precision recall f1");
    for m in threshold_sweep(&probs, &data.shots, &uniform_grid(21))? {
        println!("{:.2} {:.4} {:.4} {:.4}", m.threshold, m.precision, m.recall, m.f1);
    }
    let verdicts: Vec<Vec<bool>> = probs.iter().map(|p| p.iter().map(|&x| x >= 0.5).collect()).collect();
    let miss = miss_analysis(&verdicts, &data.shots)?;
    println!("onset events misses miss_rate");
    for r in 0..t {
        let rate = miss.miss_rate_by_round[r].map_or("-".to_string(), |x| format!("{x:.3}"));
        println!("{} {} {} {rate}", r + 1, miss.events_by_loss_round[r], miss.fn_by_loss_round[r]);
    }
    Ok(())
}
