use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{embed_inputs, global_spatial_attention, local_gnn_layer, temporal_mixing, Geometry, Pass};
use super::params::{param_ids, ModelParams, ParamIds};
use super::tape::{Mat, Sparse, Var};
use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::experiment::ShotRecord;
use crate::lattice::{shortest_distances, CodeLayout, DistanceMatrix};

/// Per-sample head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    /// One logit per equivalent observable of the record's basis.
    pub logical: Vec<f64>,
    /// `rounds x data`, round-major: entry `r * nd + q` is round `r + 1`.
    pub loss: Vec<f64>,
    pub rounds: usize,
    pub num_data: usize,
}

impl Logits {
    /// Logit that data qubit `q` is lost in round `r + 1`.
    pub fn loss_logit(&self, q: usize, r: usize) -> f64 {
        self.loss[r * self.num_data + q]
    }
}

/// Scalar objective and its parts for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    /// Mean cross-entropy over kept observables; `None` when every
    /// observable of the batch is excluded and the term is skipped.
    pub logical: Option<f64>,
    pub loss_mask: f64,
}

/// Normalizers of the two loss terms, fixed per batch so that chunked
/// evaluation sums to the whole-batch objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossNorms {
    pub kept_observables: usize,
    pub mask_entries: usize,
    pub pos_weight: f64,
}

impl LossNorms {
    pub fn of(records: &[&ShotRecord], pos_weight: f64) -> Self {
        LossNorms {
            kept_observables: records
                .iter()
                .map(|r| r.excluded_observables.iter().filter(|&&e| !e).count())
                .sum(),
            mask_entries: records.iter().map(|r| r.loss_mask_truth.rows() * r.loss_mask_truth.cols()).sum(),
            pos_weight,
        }
    }
}

/// Negatives over positives in the loss masks of `records`, 1 without positives.
pub fn positive_class_weight(records: &[ShotRecord]) -> f64 {
    let pos: usize = records.iter().map(|r| r.loss_mask_truth.count_ones()).sum();
    let total: usize = records.iter().map(|r| r.loss_mask_truth.rows() * r.loss_mask_truth.cols()).sum();
    if pos == 0 {
        1.0
    } else {
        (total - pos) as f64 / pos as f64
    }
}

/// Spatiotemporal GNN decoder bound to one code distance.
#[derive(Debug)]
pub struct Stgnn {
    pub config: ModelConfig,
    pub params: ModelParams,
    ids: ParamIds,
    layout: CodeLayout,
    dist: DistanceMatrix,
    forwards: AtomicU64,
}

impl Clone for Stgnn {
    fn clone(&self) -> Self {
        Stgnn {
            config: self.config.clone(),
            params: self.params.clone(),
            ids: self.ids.clone(),
            layout: self.layout.clone(),
            dist: self.dist.clone(),
            forwards: AtomicU64::new(0),
        }
    }
}

pub(crate) struct Heads {
    pub logical: Var,
    pub loss: Var,
}

impl Stgnn {
    pub fn new(config: ModelConfig, layout: &CodeLayout) -> Result<Self> {
        let params = ModelParams::init(&config, layout.num_nodes())?;
        Self::with_params(config, layout, params)
    }

    pub fn with_params(config: ModelConfig, layout: &CodeLayout, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let reference = ModelParams::init(&config, layout.num_nodes())?;
        let shapes_match = reference.len() == params.len()
            && reference
                .tensors()
                .iter()
                .zip(params.tensors())
                .all(|(a, b)| (a.rows, a.cols) == (b.rows, b.cols));
        if !shapes_match {
            return Err(Error::ShapeMismatch("parameters do not match the configuration".into()));
        }
        Ok(Stgnn {
            ids: param_ids(&config, layout.num_nodes()),
            dist: shortest_distances(layout, config.distance_cap),
            layout: layout.clone(),
            config,
            params,
            forwards: AtomicU64::new(0),
        })
    }

    pub fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn layout(&self) -> &CodeLayout {
        &self.layout
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.dist
    }

    /// Number of samples pushed through the network so far.
    pub fn forward_passes(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn geometry(&self, rounds: usize, batch: usize) -> Result<Geometry> {
        Geometry::new(&self.layout, &self.dist, rounds, batch, self.config.kernel, self.config.heads)
    }

    /// Records the whole network on `pass`.
    pub(crate) fn record(&self, pass: &mut Pass, geo: &Geometry, records: &[&ShotRecord]) -> Result<Heads> {
        self.forwards.fetch_add(records.len() as u64, Ordering::Relaxed);
        let mut h = embed_inputs(pass, &self.ids, geo, &self.layout, records)?;
        for b in &self.ids.blocks {
            h = local_gnn_layer(pass, &b.gnn, geo, h);
            h = temporal_mixing(pass, &b.temporal, geo, h);
            h = global_spatial_attention(pass, &b.spatial, geo, h);
        }
        let x = pass.tape.layer_norm(h.var, pass.p(self.ids.final_ln_g), pass.p(self.ids.final_ln_b));

        // Logical head: final-slot mean over each observable's support,
        // alongside the final-slot mean over all nodes.
        let rows = geo.rows();
        let t_final = geo.rounds;
        let n = geo.nodes;
        let obs_count = self.layout.distance();
        let mut obs = Vec::new();
        let mut glob = Vec::new();
        for (b, rec) in records.iter().enumerate() {
            let supports = self.layout.observable_supports(rec.basis);
            for (i, s) in supports.iter().enumerate() {
                let out = b * obs_count + i;
                obs.extend(s.iter().map(|&q| (out, geo.row(b, t_final, q), 1.0 / s.len() as f64)));
                glob.extend((0..n).map(|v| (out, geo.row(b, t_final, v), 1.0 / n as f64)));
            }
        }
        let out_rows = records.len() * obs_count;
        let pool_obs = Arc::new(Sparse::from_triplets(out_rows, rows, obs));
        let pool_glob = Arc::new(Sparse::from_triplets(out_rows, rows, glob));
        let po = pass.tape.spmm(&pool_obs, x);
        let pg = pass.tape.spmm(&pool_glob, x);
        let a = pass.tape.matmul(po, pass.p(self.ids.logic_w_obs));
        let g = pass.tape.matmul(pg, pass.p(self.ids.logic_w_glob));
        let z = pass.tape.add(a, g);
        let z = pass.tape.add_bias(z, pass.p(self.ids.logic_b1));
        let z = pass.tape.silu(z);
        let z = pass.tape.matmul(z, pass.p(self.ids.logic_w2));
        let logical = pass.tape.add_bias(z, pass.p(self.ids.logic_b2));

        // Loss head: data rows of slots 0..T.
        let nd = geo.num_data;
        let mut sel = Vec::with_capacity(records.len() * geo.rounds * nd);
        for b in 0..records.len() {
            for t in 0..geo.rounds {
                for q in 0..nd {
                    sel.push(((b * geo.rounds + t) * nd + q, geo.row(b, t, q), 1.0));
                }
            }
        }
        let sel = Arc::new(Sparse::from_triplets(records.len() * geo.rounds * nd, rows, sel));
        let y = pass.tape.spmm(&sel, x);
        let y = pass.tape.matmul(y, pass.p(self.ids.loss_w1));
        let y = pass.tape.add_bias(y, pass.p(self.ids.loss_b1));
        let y = pass.tape.silu(y);
        let y = pass.tape.matmul(y, pass.p(self.ids.loss_w2));
        let loss = pass.tape.add_bias(y, pass.p(self.ids.loss_b2));
        Ok(Heads { logical, loss })
    }

    fn split(&self, pass: &Pass, heads: &Heads, geo: &Geometry) -> Vec<Logits> {
        let lg = &pass.tape.value(heads.logical).data;
        let ls = &pass.tape.value(heads.loss).data;
        let d = self.layout.distance();
        let per = geo.rounds * geo.num_data;
        (0..geo.batch)
            .map(|b| Logits {
                logical: lg[b * d..(b + 1) * d].to_vec(),
                loss: ls[b * per..(b + 1) * per].to_vec(),
                rounds: geo.rounds,
                num_data: geo.num_data,
            })
            .collect()
    }

    /// Inference on one record.
    pub fn forward(&self, record: &ShotRecord) -> Result<Logits> {
        Ok(self.forward_batch(&[record])?.remove(0))
    }

    /// Inference on records that share a round count.
    pub fn forward_batch(&self, records: &[&ShotRecord]) -> Result<Vec<Logits>> {
        let Some(first) = records.first() else {
            return Ok(Vec::new());
        };
        let geo = self.geometry(first.rounds(), records.len())?;
        let mut pass = Pass::new(&self.params);
        let heads = self.record(&mut pass, &geo, records)?;
        Ok(self.split(&pass, &heads, &geo))
    }

    /// Loss and gradients of the objective over `records`, normalized by
    /// `norms`. Dropout is drawn from `rng` when given.
    pub fn gradients(
        &self,
        records: &[&ShotRecord],
        norms: LossNorms,
        rng: Option<ChaCha8Rng>,
    ) -> Result<(LossTerms, Vec<Logits>, Vec<Mat>)> {
        let first = records
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
        let geo = self.geometry(first.rounds(), records.len())?;
        let mut pass = match rng {
            Some(r) => Pass::training(&self.params, self.config.dropout, r),
            None => Pass::new(&self.params),
        };
        let heads = self.record(&mut pass, &geo, records)?;
        let (total, terms) = multi_task_loss(&mut pass, &heads, records, &self.config, norms)?;
        if !terms.total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite objective: logical {:?}, loss mask {}",
                terms.logical, terms.loss_mask
            )));
        }
        let grads = pass
            .tape
            .backward(total, self.params.len())
            .into_iter()
            .zip(self.params.tensors())
            .map(|(g, p)| g.unwrap_or_else(|| Mat::zeros(p.rows, p.cols)))
            .collect();
        let logits = self.split(&pass, &heads, &geo);
        Ok((terms, logits, grads))
    }
}

/// `lambda_logic * BCE(kept observables) + lambda_loss * weighted BCE(mask)`.
pub(crate) fn multi_task_loss(
    pass: &mut Pass,
    heads: &Heads,
    records: &[&ShotRecord],
    config: &ModelConfig,
    norms: LossNorms,
) -> Result<(Var, LossTerms)> {
    let mut y = Vec::new();
    let mut w = Vec::new();
    for r in records {
        for (label, excluded) in r.logical_labels.iter().zip(&r.excluded_observables) {
            y.push(*label as u8 as f64);
            w.push(if *excluded { 0.0 } else { 1.0 });
        }
    }
    if y.len() != pass.tape.value(heads.logical).len() {
        return Err(Error::ShapeMismatch("one logical label per observable logit".into()));
    }
    let mut my = Vec::new();
    let mut mw = Vec::new();
    for r in records {
        for bit in r.loss_mask_truth.iter() {
            my.push(bit as u8 as f64);
            mw.push(if bit { norms.pos_weight } else { 1.0 });
        }
    }
    if my.len() != pass.tape.value(heads.loss).len() {
        return Err(Error::ShapeMismatch("one loss label per loss logit".into()));
    }
    let mask = pass
        .tape
        .bce_with_logits(heads.loss, my, mw, norms.mask_entries.max(1) as f64);
    let mask_value = pass.tape.value(mask).data[0];
    let mut total = pass.tape.scale(mask, config.lambda_loss);
    let mut terms = LossTerms {
        total: 0.0,
        logical: None,
        loss_mask: mask_value,
    };
    if norms.kept_observables > 0 {
        let logic = pass
            .tape
            .bce_with_logits(heads.logical, y, w, norms.kept_observables as f64);
        terms.logical = Some(pass.tape.value(logic).data[0]);
        let scaled = pass.tape.scale(logic, config.lambda_logic);
        total = pass.tape.add(total, scaled);
    }
    terms.total = pass.tape.value(total).data[0];
    Ok((total, terms))
}

/// Loss-head output thresholded into a mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LossPrediction {
    /// `rounds x data`, round-major.
    pub probabilities: Vec<f64>,
    pub mask: BitMatrix,
    /// Probability at the final round, per data qubit.
    pub final_probabilities: Vec<f64>,
}

pub fn predict_loss_mask(model: &Stgnn, record: &ShotRecord, threshold: f64) -> Result<LossPrediction> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} must lie in [0, 1]")));
    }
    let logits = model.forward(record)?;
    Ok(loss_prediction(&logits, threshold))
}

pub(crate) fn loss_prediction(logits: &Logits, threshold: f64) -> LossPrediction {
    let probabilities: Vec<f64> = logits.loss.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect();
    let nd = logits.num_data;
    let mask = BitMatrix::from_fn(logits.rounds, nd, |r, q| probabilities[r * nd + q] >= threshold);
    let final_probabilities = probabilities[(logits.rounds - 1) * nd..].to_vec();
    LossPrediction {
        probabilities,
        mask,
        final_probabilities,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{Experiment, NoiseParams};
    use crate::lattice::{build_layout, Basis};
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            heads: 2,
            ..Default::default()
        }
    }

    fn records(l: &CodeLayout, t: usize, n: usize, p_loss: f64) -> Vec<ShotRecord> {
        let noise = NoiseParams::new(0.02, 0.02, p_loss).unwrap();
        let e = Experiment::new(l, noise, t, Basis::Z).unwrap();
        (0..n)
            .map(|i| e.run(&mut ChaCha8Rng::seed_from_u64(100 + i as u64)))
            .collect()
    }

    #[test]
    fn output_shapes_and_determinism() {
        let l = build_layout(3).unwrap();
        let m = Stgnn::new(tiny(), &l).unwrap();
        let rec = &records(&l, 4, 1, 0.02)[0];
        let a = m.forward(rec).unwrap();
        assert_eq!(a.logical.len(), 3);
        assert_eq!(a.loss.len(), 9 * 4);
        assert_eq!(a, m.forward(rec).unwrap());
        assert_eq!(m.forward_passes(), 2);
    }

    #[test]
    fn batch_of_one_matches_batch_of_eight() {
        let l = build_layout(3).unwrap();
        let m = Stgnn::new(tiny(), &l).unwrap();
        let recs = records(&l, 3, 8, 0.05);
        let refs: Vec<&ShotRecord> = recs.iter().collect();
        let batch = m.forward_batch(&refs).unwrap();
        for (r, b) in recs.iter().zip(&batch) {
            let one = m.forward(r).unwrap();
            for (x, y) in one.logical.iter().chain(&one.loss).zip(b.logical.iter().chain(&b.loss)) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn round_order_matters() {
        let l = build_layout(3).unwrap();
        let m = Stgnn::new(tiny(), &l).unwrap();
        let rec = records(&l, 4, 1, 0.0).remove(0);
        let mut swapped = rec.clone();
        for o in 0..8 {
            let (a, b) = (rec.detectors.get(1, o), rec.detectors.get(2, o));
            swapped.detectors.set(1, o, b);
            swapped.detectors.set(2, o, a);
        }
        swapped.detectors.flip(1, 3);
        let (x, y) = (m.forward(&rec).unwrap(), m.forward(&swapped).unwrap());
        assert_ne!(x.loss, y.loss);
    }

    #[test]
    fn zero_logits_cost_ln2_per_bit() {
        let l = build_layout(3).unwrap();
        let mut m = Stgnn::new(tiny(), &l).unwrap();
        for id in [m.ids.logic_w2, m.ids.logic_b2, m.ids.loss_w2, m.ids.loss_b2] {
            m.params.get_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let recs = records(&l, 3, 4, 0.05);
        let refs: Vec<&ShotRecord> = recs.iter().collect();
        let norms = LossNorms::of(&refs, 1.0);
        let (terms, _, _) = m.gradients(&refs, norms, None).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((terms.logical.unwrap() - ln2).abs() < 1e-12);
        assert!((terms.loss_mask - ln2).abs() < 1e-12);
        assert!((terms.total - 2.0 * ln2).abs() < 1e-12);
    }

    #[test]
    fn fully_excluded_batch_skips_logical_term() {
        let l = build_layout(3).unwrap();
        let m = Stgnn::new(tiny(), &l).unwrap();
        let mut recs = records(&l, 3, 2, 0.0);
        for r in &mut recs {
            r.excluded_observables = vec![true; 3];
        }
        let refs: Vec<&ShotRecord> = recs.iter().collect();
        let (terms, _, grads) = m.gradients(&refs, LossNorms::of(&refs, 1.0), None).unwrap();
        assert_eq!(terms.logical, None);
        for id in m.ids.logic_head() {
            assert!(grads[id].data.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn zero_loss_weight_leaves_loss_head_untouched() {
        let l = build_layout(3).unwrap();
        let m = Stgnn::new(ModelConfig { lambda_loss: 0.0, ..tiny() }, &l).unwrap();
        let recs = records(&l, 3, 3, 0.05);
        let refs: Vec<&ShotRecord> = recs.iter().collect();
        let (terms, _, grads) = m.gradients(&refs, LossNorms::of(&refs, 2.0), None).unwrap();
        assert_eq!(terms.total, terms.logical.unwrap());
        for id in m.ids.loss_head() {
            assert!(grads[id].data.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn prediction_thresholds() {
        let l = build_layout(3).unwrap();
        let m = Stgnn::new(tiny(), &l).unwrap();
        let rec = &records(&l, 3, 1, 0.05)[0];
        assert_eq!(predict_loss_mask(&m, rec, 0.0).unwrap().mask.count_ones(), 27);
        assert!(predict_loss_mask(&m, rec, 1.0).unwrap().mask.is_zero());
        assert!(predict_loss_mask(&m, rec, 1.5).is_err());
        let p = predict_loss_mask(&m, rec, 0.5).unwrap();
        assert_eq!(p.final_probabilities, p.probabilities[18..].to_vec());
    }

    #[test]
    fn positive_weight_balances_classes() {
        let l = build_layout(3).unwrap();
        let recs = records(&l, 5, 20, 0.05);
        let pos: usize = recs.iter().map(|r| r.loss_mask_truth.count_ones()).sum();
        let w = positive_class_weight(&recs);
        assert!((w * pos as f64 - (20 * 45 - pos) as f64).abs() < 1e-9);
        assert_eq!(positive_class_weight(&recs[..0]), 1.0);
    }
}
