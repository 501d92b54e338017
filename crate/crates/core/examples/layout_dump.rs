//! Prints the rotated-code layout, its CX schedule and a few Tanner-graph
//! distances.
//!
//! `cargo run --example layout_dump -- [d]`

use qloss::lattice::{build_layout, shortest_distances, Basis};

fn main() -> qloss::Result<()> {
    let d: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let layout = build_layout(d)?;
    print!("{}", layout.dump());
    println!(
        "data {} ancillas {} (X {}, Z {}) tanner edges {}",
        layout.num_data(),
        layout.num_ancillas(),
        layout.ancillas_of(Basis::X).len(),
        layout.ancillas_of(Basis::Z).len(),
        layout.tanner_edges().len()
    );
    for (step, pairs) in layout.schedule().iter().enumerate() {
        println!("cx layer {step}: {pairs:?}");
    }
    for basis in [Basis::Z, Basis::X] {
        println!("{basis} observables: {:?}", layout.observable_supports(basis));
    }
    let dist = shortest_distances(&layout, 8);
    let far = (0..layout.num_nodes()).map(|v| dist.get(0, v)).max().unwrap_or(0);
    println!("largest hop count from node 0: {far}");
    Ok(())
}
