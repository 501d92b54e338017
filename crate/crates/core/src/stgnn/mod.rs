//! Spatiotemporal graph neural network decoder.
//!
//! The whole `(T+1)`-slot syndrome volume is embedded at once and passed
//! through `N_l` blocks of local Tanner-graph message passing, gated
//! temporal mixing (convolution and attention along rounds) and global
//! spatial attention with a learned distance bias. Every residual branch is
//! pre-normalized. Two heads read the final volume: one logit per
//! equivalent observable and one loss logit per data qubit and round.
//!
//! Everything runs in `f64` on a small reverse-mode tape.

mod checkpoint;
mod config;
mod layers;
mod model;
mod params;
pub mod tape;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use layers::{
    embed_inputs, global_spatial_attention, local_gnn_layer, temporal_mixing, Geometry, HiddenVolume, Pass,
};
pub use model::{
    positive_class_weight, predict_loss_mask, LossNorms, LossPrediction, LossTerms, Logits, Stgnn,
};
pub use params::{param_ids, BlockIds, GnnIds, ModelParams, ParamIds, SpatialIds, TemporalIds};
pub use train::{train, EpochLog, TrainConfig, Trainer};

#[cfg(test)]
mod gradcheck {
    use super::*;
    use crate::experiment::{sample_dataset, NoiseParams, ShotRecord};
    use crate::lattice::{build_layout, Basis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central differences on a sample of entries of every tensor; the
    /// relative error is taken over each tensor's sampled entries.
    fn check(model: &Stgnn, records: &[ShotRecord], seed: u64, per_tensor: usize) {
        let refs: Vec<&ShotRecord> = records.iter().collect();
        let norms = LossNorms::of(&refs, 3.0);
        let (_, _, grads) = model.gradients(&refs, norms, None).unwrap();
        let objective = |m: &Stgnn| m.gradients(&refs, norms, None).unwrap().0.total;
        let mut probe = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-4;
        for id in 0..model.params.len() {
            let len = model.params.get(id).len();
            let picks: Vec<usize> = if len <= per_tensor {
                (0..len).collect()
            } else {
                (0..per_tensor).map(|_| rng.gen_range(0..len)).collect()
            };
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for k in picks {
                let orig = probe.params.get(id).data[k];
                probe.params.get_mut(id).data[k] = orig + h;
                let up = objective(&probe);
                probe.params.get_mut(id).data[k] = orig - h;
                let down = objective(&probe);
                probe.params.get_mut(id).data[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[id].data[k];
                diff += (numeric - analytic).powi(2);
                scale = scale.max(numeric.abs()).max(analytic.abs());
            }
            let name = model.params.name(id);
            assert!(
                diff.sqrt() <= 1e-4 * scale.max(1e-6),
                "{name}: gradient error {} against scale {scale}",
                diff.sqrt()
            );
            assert!(grads[id].data.iter().any(|&g| g != 0.0), "{name} receives no gradient");
        }
    }

    fn setup(seed: u64) -> (Stgnn, Vec<ShotRecord>) {
        let l = build_layout(3).unwrap();
        let c = ModelConfig {
            hidden: 8,
            heads: 2,
            seed,
            ..Default::default()
        };
        let mut model = Stgnn::new(c, &l).unwrap();
        // Non-trivial gate bias and head biases so no term sits at a symmetric point.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for id in 0..model.params.len() {
            if model.params.name(id).ends_with("b2") || model.params.name(id).contains("gate_bias") {
                model.params.get_mut(id).data.iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
            }
        }
        let noise = NoiseParams::new(0.05, 0.05, 0.08).unwrap();
        let mut recs = sample_dataset(&l, noise, 3, Basis::Z, 2, seed).unwrap().shots;
        recs.extend(sample_dataset(&l, noise, 3, Basis::X, 2, seed + 7).unwrap().shots);
        (model, recs)
    }

    #[test]
    fn every_parameter_group_matches_finite_differences() {
        for seed in [1, 2, 3] {
            let (model, recs) = setup(seed);
            check(&model, &recs, seed, 6);
        }
    }

    #[test]
    fn saturated_gate_gradients_match_finite_differences() {
        let (mut model, recs) = setup(4);
        let t = model.ids().blocks[0].temporal.gate_bias;
        model.params.get_mut(t).data.iter_mut().for_each(|x| *x = 4.0);
        let refs: Vec<&ShotRecord> = recs.iter().collect();
        let norms = LossNorms::of(&refs, 1.0);
        let (_, _, grads) = model.gradients(&refs, norms, None).unwrap();
        // Near-saturated gate: the attention branch still carries a small, exact gradient.
        let wo = model.ids().blocks[0].temporal.wo;
        let mut probe = model.clone();
        let h = 1e-4;
        for k in [0, 5, 17, 40] {
            let orig = probe.params.get(wo).data[k];
            probe.params.get_mut(wo).data[k] = orig + h;
            let up = probe.gradients(&refs, norms, None).unwrap().0.total;
            probe.params.get_mut(wo).data[k] = orig - h;
            let down = probe.gradients(&refs, norms, None).unwrap().0.total;
            probe.params.get_mut(wo).data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!((numeric - grads[wo].data[k]).abs() <= 1e-4 * numeric.abs().max(1e-7), "{numeric} vs {}", grads[wo].data[k]);
        }
    }
}
