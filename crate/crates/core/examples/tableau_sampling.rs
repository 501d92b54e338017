//! Stabilizer-tableau basics: a noisy GHZ state, its stabilizers, and the
//! empirical parity of repeated Z measurements.
//!
//! `cargo run --example tableau_sampling -- [shots] [p]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qloss::stab_sim::{Channel, Gate, Pauli, PauliString, Tableau};

fn main() -> qloss::Result<()> {
    let shots: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let p: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut ghz = Tableau::new(3)?;
    ghz.apply(Gate::H(0))?;
    ghz.apply(Gate::Cx(0, 1))?;
    ghz.apply(Gate::Cx(1, 2))?;
    for s in ghz.stabilizers() {
        println!("stabilizer {s:?}");
    }
    let xxx = PauliString::from_terms(3, &[(0, Pauli::X), (1, Pauli::X), (2, Pauli::X)])?;
    let m = ghz.clone().measure_pauli(&xxx, &mut rng)?;
    println!("XXX outcome {} deterministic {}", m.outcome as u8, m.deterministic);

    let mut counts = [0usize; 8];
    for _ in 0..shots {
        let mut t = ghz.clone();
        t.apply_pauli_channel(Channel::FlipX, p, &[1], &mut rng)?;
        let mut k = 0;
        for q in 0..3 {
            k |= (t.measure_z(q, &mut rng)?.outcome as usize) << q;
        }
        counts[k] += 1;
    }
    for (k, c) in counts.iter().enumerate() {
        println!("{:03b} {:.4}", k, *c as f64 / shots as f64);
    }
    Ok(())
}
