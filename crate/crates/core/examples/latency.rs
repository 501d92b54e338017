//! Per-window decode latency for matching and for one STGNN forward pass
//! over a full window. Timings are relative to this machine.
//!
//! `cargo run --release --example latency -- [d] [T] [repetitions]`

use qloss::decoders::{MwpmDecoder, StgnnDecoder, WindowDecoder};
use qloss::experiment::{sample_dataset, NoiseParams};
use qloss::lattice::{build_layout, Basis};
use qloss::matching::build_detector_graph;
use qloss::metrics::{latency_bench, LatencyStats};
use qloss::stgnn::{ModelConfig, Stgnn};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn show(name: &str, s: &LatencyStats) {
    println!(
        "{name:<6} median {:.4} ms  iqr {:.4} ms  over {} windows (warm-up {})  passes/window {:?}",
        s.per_window_ms, s.iqr_ms, s.windows_measured, s.warmup, s.forward_passes_per_window
    );
}

fn main() -> qloss::Result<()> {
    let d: usize = arg(1, 3);
    let t: usize = arg(2, 10);
    let reps: usize = arg(3, 200);

    let layout = build_layout(d)?;
    let noise = NoiseParams::uniform(0.005)?;
    let data = sample_dataset(&layout, noise, t, Basis::Z, reps, 2)?.shots;

    let graph = build_detector_graph(&layout, &noise.without_loss(), t, Basis::Z)?;
    let mwpm = MwpmDecoder { graph: &graph };
    let s = latency_bench(&data, 20, reps, |r| mwpm.decode(r).map(|_| ()), None::<fn() -> u64>)?;
    show("mwpm", &s);

    let model = Stgnn::new(ModelConfig::default(), &layout)?;
    let stgnn = StgnnDecoder { model: &model };
    let s = latency_bench(&data, 20, reps, |r| stgnn.decode(r).map(|_| ()), Some(|| model.forward_passes()))?;
    show("stgnn", &s);
    Ok(())
}
