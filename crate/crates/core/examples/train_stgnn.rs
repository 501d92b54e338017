//! Trains the toy STGNN on a freshly sampled dataset and reports training
//! and held-out accuracy.
//!
//! `cargo run --release --example train_stgnn -- [d] [T] [p] [shots] [epochs] [seed] [checkpoint]`

use qloss::experiment::{sample_dataset, NoiseParams, ShotRecord};
use qloss::lattice::{build_layout, Basis};
use qloss::metrics::{logical_accuracy, loss_metrics};
use qloss::stgnn::{save_checkpoint, ModelConfig, Stgnn, TrainConfig, Trainer};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn evaluate(model: &Stgnn, data: &[ShotRecord]) -> qloss::Result<(f64, f64, f64)> {
    let refs: Vec<&ShotRecord> = data.iter().collect();
    let mut preds = Vec::with_capacity(data.len());
    let mut probs = Vec::with_capacity(data.len());
    for chunk in refs.chunks(64) {
        for l in model.forward_batch(chunk)? {
            preds.push(l.logical.iter().map(|&z| z > 0.0).collect::<Vec<_>>());
            let nd = l.num_data;
            probs.push(
                l.loss[(l.rounds - 1) * nd..]
                    .iter()
                    .map(|&z| 1.0 / (1.0 + (-z).exp()))
                    .collect::<Vec<_>>(),
            );
        }
    }
    let acc = logical_accuracy(&preds, data)?;
    let lm = loss_metrics(&probs, data, 0.5)?;
    Ok((acc.accuracy, lm.precision, lm.recall))
}

fn main() -> qloss::Result<()> {
    let d: usize = arg(1, 3);
    let rounds: usize = arg(2, 5);
    let p: f64 = arg(3, 0.005);
    let shots: usize = arg(4, 512);
    let epochs: usize = arg(5, 40);
    let seed: u64 = arg(6, 1);
    let out: Option<String> = std::env::args().nth(7);

    let layout = build_layout(d)?;
    let noise = NoiseParams::uniform(p)?;
    let train = sample_dataset(&layout, noise, rounds, Basis::Z, shots, seed)?.shots;
    let held_out = sample_dataset(&layout, noise, rounds, Basis::Z, shots, seed + 1)?.shots;

    let model = Stgnn::new(ModelConfig { seed, ..Default::default() }, &layout)?;
    println!("parameters {}", model.params.num_scalars());
    let config = TrainConfig {
        epochs,
        seed,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, config);
    trainer.run(&train, |log| {
        println!("{log}");
        true
    })?;
    let (acc, prec, rec) = evaluate(&trainer.model, &train)?;
    println!("train    logical_accuracy={acc:.4} loss_precision={prec:.4} loss_recall={rec:.4}");
    let (acc, prec, rec) = evaluate(&trainer.model, &held_out)?;
    println!("held_out logical_accuracy={acc:.4} loss_precision={prec:.4} loss_recall={rec:.4}");
    if let Some(path) = out {
        std::fs::write(&path, save_checkpoint(&trainer.model, trainer.epoch))
            .map_err(|e| qloss::Error::Config(format!("{path}: {e}")))?;
        println!("checkpoint {path}");
    }
    Ok(())
}
