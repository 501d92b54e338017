//! Samples a memory-experiment dataset, round-trips it through the binary
//! format and prints summary statistics.
//!
//! `cargo run --release --example simulate_dataset -- [d] [T] [p] [shots] [seed] [path]`

use qloss::experiment::{deserialize, sample_dataset, serialize, NoiseParams};
use qloss::lattice::{build_layout, Basis};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> qloss::Result<()> {
    let d: usize = arg(1, 5);
    let t: usize = arg(2, 10);
    let p: f64 = arg(3, 0.005);
    let shots: usize = arg(4, 10_000);
    let seed: u64 = arg(5, 1);
    let path: Option<String> = std::env::args().nth(6);

    let layout = build_layout(d)?;
    let data = sample_dataset(&layout, NoiseParams::uniform(p)?, t, Basis::Z, shots, seed)?;
    let bytes = serialize(&data)?;
    assert_eq!(deserialize(&bytes)?, data);
    println!("{:?}", data.header);
    println!("{} bytes for {} shots", bytes.len(), data.len());

    let clicks: usize = data.shots.iter().map(|s| s.detectors.count_ones()).sum();
    let slots = data.len() * (t + 1) * layout.num_ancillas();
    let with_loss = data.shots.iter().filter(|s| !s.lost_data().is_empty()).count();
    let (mut flips, mut kept) = (0usize, 0usize);
    for s in &data.shots {
        for (&y, &ex) in s.logical_labels.iter().zip(&s.excluded_observables) {
            if !ex {
                kept += 1;
                flips += y as usize;
            }
        }
    }
    println!("detector click rate {:.4}", clicks as f64 / slots as f64);
    println!("shots with a lost data qubit {:.4}", with_loss as f64 / data.len() as f64);
    println!("raw flip rate of kept observables {:.4}", flips as f64 / kept.max(1) as f64);
    if let Some(path) = path {
        std::fs::write(&path, &bytes).map_err(|e| qloss::Error::Config(format!("{path}: {e}")))?;
        println!("wrote {path}");
    }
    Ok(())
}
