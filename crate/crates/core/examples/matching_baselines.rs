//! Standard and delayed-erasure matching on freshly sampled shots.
//!
//! Usage: `matching_baselines [d] [T] [p] [p_loss] [shots] [seed]`

use rayon::prelude::*;

use qloss::experiment::{sample_dataset, NoiseParams};
use qloss::lattice::{build_layout, Basis};
use qloss::matching::{build_detector_graph, erasure_decode, mwpm_decode};
use qloss::metrics::{logical_accuracy, wilson_interval};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> qloss::Result<()> {
    let d: usize = arg(1, 3);
    let t: usize = arg(2, d);
    let p: f64 = arg(3, 0.005);
    let p_loss: f64 = arg(4, p);
    let shots: usize = arg(5, 2000);
    let seed: u64 = arg(6, 1);

    let layout = build_layout(d)?;
    let noise = NoiseParams::new(p, p, p_loss)?;
    let data = sample_dataset(&layout, noise, t, Basis::Z, shots, seed)?;
    // The graph only carries Pauli and readout faults.
    let graph = build_detector_graph(&layout, &noise, t, Basis::Z)?;
    println!("d={d} T={t} p={p} p_loss={p_loss} shots={shots} edges={}", graph.edges.len());

    let standard: Vec<Vec<bool>> = data
        .shots
        .par_iter()
        .map(|s| mwpm_decode(&graph, &s.detectors))
        .collect::<qloss::Result<_>>()?;
    let erasure: Vec<Vec<bool>> = data
        .shots
        .par_iter()
        .map(|s| erasure_decode(&graph, &s.detectors, &s.lost_data()))
        .collect::<qloss::Result<_>>()?;

    for (name, preds) in [("mwpm", &standard), ("de-mwpm", &erasure)] {
        let acc = logical_accuracy(preds, &data.shots)?;
        let (lo, hi) = wilson_interval(acc.shot_failures, acc.shots_scored, 1.96);
        println!(
            "{name:8} accuracy={:.4} shot_error_rate={:.4} [{lo:.4}, {hi:.4}] scored={}",
            acc.accuracy,
            acc.shot_error_rate(),
            acc.shots_scored
        );
    }
    Ok(())
}
