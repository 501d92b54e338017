//! Loss-identification trends on held-out shots: threshold sweep and miss
//! rate by onset round, for the flicker baseline and a toy-trained STGNN.
//!
//! `cargo run --release --example loss_trends -- [T] [train_shots] [epochs] [held_out] [seed]`

use qloss::decoders::{decode_all, evaluate, FlickerDecoder, StgnnDecoder, VerdictMode};
use qloss::experiment::{sample_dataset, NoiseParams};
use qloss::flicker::calibrate_background;
use qloss::lattice::{build_layout, Basis};
use qloss::metrics::EvalReport;
use qloss::stgnn::{ModelConfig, Stgnn, TrainConfig, Trainer};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn show(r: &EvalReport) {
    println!("== {} ==", r.decoder);
    println!("threshold precision recall f1");
    for m in &r.threshold_curve {
        println!("{:.2} {:.4} {:.4} {:.4}", m.threshold, m.precision, m.recall, m.f1);
    }
    let rates: Vec<String> = r
        .miss_rate_by_round
        .iter()
        .map(|x| x.map_or("-".into(), |x| format!("{x:.3}")))
        .collect();
    println!("miss_rate_by_round {}", rates.join(" "));
}

fn main() -> qloss::Result<()> {
    let t: usize = arg(1, 10);
    let train_shots: usize = arg(2, 2048);
    let epochs: usize = arg(3, 20);
    let held_out: usize = arg(4, 10000);
    let seed: u64 = arg(5, 11);
    let p = 0.005;

    let layout = build_layout(3)?;
    let noise = NoiseParams::uniform(p)?;
    let train = sample_dataset(&layout, noise, t, Basis::Z, train_shots, seed)?.shots;
    let test = sample_dataset(&layout, noise, t, Basis::Z, held_out, seed + 1)?.shots;

    let b = calibrate_background(&layout, noise, t, Basis::Z, 2000, seed + 2)?;
    let flicker = FlickerDecoder {
        layout: &layout,
        basis: Basis::Z,
        background_rate: b,
        prior_rate: p,
    };
    show(&evaluate("flicker", &decode_all(&flicker, &test)?, &test, 0.5, VerdictMode::Final)?);

    let model = Stgnn::new(ModelConfig { seed, ..Default::default() }, &layout)?;
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            epochs,
            seed,
            ..Default::default()
        },
    );
    trainer.run(&train, |log| {
        println!("{log}");
        true
    })?;
    let dec = StgnnDecoder { model: &trainer.model };
    let report = evaluate("stgnn", &decode_all(&dec, &test)?, &test, 0.5, VerdictMode::Final)?;
    println!("stgnn held-out logical_accuracy {:?}", report.logical_accuracy);
    show(&report);
    Ok(())
}
