//! Forces one bulk data qubit lost at round 1 with no other noise and prints
//! how often each neighbouring detector clicks, slice by slice.
//!
//! `cargo run --release --example flicker_signature -- [d] [T] [shots]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qloss::experiment::{Experiment, Forcing, NoiseParams};
use qloss::lattice::{build_layout, Basis};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> qloss::Result<()> {
    let d: usize = arg(1, 3);
    let t: usize = arg(2, 10);
    let shots: usize = arg(3, 10_000);

    let layout = build_layout(d)?;
    let q = (0..layout.num_data()).find(|&q| layout.is_bulk_data(q)).expect("d >= 3 has a bulk qubit");
    let exp = Experiment::new(&layout, NoiseParams::noiseless(), t, Basis::Z)?;
    let forcing = Forcing {
        data_losses: vec![(q, 1)],
        ..Default::default()
    };
    let neighbours: Vec<usize> = layout
        .data_neighbors(q)
        .iter()
        .map(|&a| layout.ancilla_ordinal(a).expect("neighbours are ancillas"))
        .collect();
    let mut counts = vec![vec![0usize; neighbours.len()]; t + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..shots {
        let rec = exp.run_forced(&mut rng, &forcing)?;
        for (slice, row) in counts.iter_mut().enumerate() {
            for (c, &o) in row.iter_mut().zip(&neighbours) {
                *c += rec.detectors.get(slice, o) as usize;
            }
        }
    }
    println!("lost data qubit {q}");
    let header: Vec<String> = neighbours.iter().map(|&o| format!("{}{o}", layout.ancilla_basis(o))).collect();
    println!("slice {}", header.join(" "));
    for (slice, row) in counts.iter().enumerate() {
        let f: Vec<String> = row.iter().map(|&c| format!("{:.3}", c as f64 / shots as f64)).collect();
        println!("{slice:>5} {}", f.join(" "));
    }
    Ok(())
}
