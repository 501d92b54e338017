//! Embedding and the three sub-layers of a block.
//!
//! A batch is one tape matrix with `B * (T+1) * N` rows of width `D`; row
//! `b * S + t * N + n` (with `S = (T+1) * N`) holds node `n` at slot `t` of
//! sample `b`. Slot `t < T` carries round `t + 1`; slot `T` carries the
//! stabilizers reconstructed from the final readout. Neighbourhoods, time
//! shifts and attention groups are fixed sparse operators over those rows,
//! so samples never mix.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::params::{GnnIds, ModelParams, SpatialIds, TemporalIds};
use super::tape::{AttnSpec, Mat, Sparse, Tape, Var};
use crate::error::{Error, Result};
use crate::experiment::ShotRecord;
use crate::lattice::{CodeLayout, DistanceMatrix, NodeKind};

/// Row structure of a batch.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub batch: usize,
    pub rounds: usize,
    pub nodes: usize,
    pub num_data: usize,
    /// Tanner adjacency within each `(sample, slot)`.
    pub adjacency: Arc<Sparse>,
    /// One shift per kernel tap, offsets `-k/2 ..= k/2`, zero padded.
    pub shifts: Vec<Arc<Sparse>>,
    pub temporal: Arc<AttnSpec>,
    pub spatial: Arc<AttnSpec>,
}

impl Geometry {
    pub fn new(
        layout: &CodeLayout,
        dist: &DistanceMatrix,
        rounds: usize,
        batch: usize,
        kernel: usize,
        heads: usize,
    ) -> Result<Self> {
        let n = layout.num_nodes();
        if rounds == 0 || kernel > rounds + 1 {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kernel} needs at least {} slots, volume has {}",
                kernel,
                rounds + 1
            )));
        }
        if dist.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "distance matrix covers {} nodes, layout has {n}",
                dist.len()
            )));
        }
        let slots = rounds + 1;
        let total = batch * slots * n;
        let row = |b: usize, t: usize, v: usize| (b * slots + t) * n + v;

        let adj = layout.adjacency();
        let mut entries = Vec::new();
        for b in 0..batch {
            for t in 0..slots {
                for (u, nbrs) in adj.iter().enumerate() {
                    entries.extend(nbrs.iter().map(|&v| (row(b, t, u), row(b, t, v), 1.0)));
                }
            }
        }
        let adjacency = Arc::new(Sparse::from_triplets(total, total, entries));

        let half = (kernel / 2) as isize;
        let shifts = (-half..=half)
            .map(|off| {
                let mut e = Vec::new();
                for b in 0..batch {
                    for t in 0..slots {
                        let src = t as isize + off;
                        if (0..slots as isize).contains(&src) {
                            e.extend((0..n).map(|v| (row(b, t, v), row(b, src as usize, v), 1.0)));
                        }
                    }
                }
                Arc::new(Sparse::from_triplets(total, total, e))
            })
            .collect();

        let temporal = Arc::new(AttnSpec {
            groups: (0..batch)
                .flat_map(|b| (0..n).map(move |v| (0..slots).map(|t| row(b, t, v)).collect()))
                .collect(),
            heads,
            buckets: None,
        });
        let buckets = (0..n * n).map(|i| dist.get(i / n, i % n) as usize).collect();
        let spatial = Arc::new(AttnSpec {
            groups: (0..batch)
                .flat_map(|b| (0..slots).map(move |t| (0..n).map(|v| row(b, t, v)).collect()))
                .collect(),
            heads,
            buckets: Some(buckets),
        });
        Ok(Geometry {
            batch,
            rounds,
            nodes: n,
            num_data: layout.num_data(),
            adjacency,
            shifts,
            temporal,
            spatial,
        })
    }

    pub fn slots(&self) -> usize {
        self.rounds + 1
    }

    pub fn rows(&self) -> usize {
        self.batch * self.slots() * self.nodes
    }

    pub fn row(&self, b: usize, t: usize, v: usize) -> usize {
        (b * self.slots() + t) * self.nodes + v
    }
}

/// Hidden features of a batch, axes `(B, T+1, N, D)` flattened row-major.
#[derive(Clone, Copy, Debug)]
pub struct HiddenVolume {
    pub var: Var,
    pub batch: usize,
    pub slots: usize,
    pub nodes: usize,
    pub width: usize,
}

impl HiddenVolume {
    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.slots, self.nodes, self.width]
    }
}

/// One forward pass: the tape, a leaf per parameter and the dropout state.
pub struct Pass {
    pub tape: Tape,
    pub params: Vec<Var>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl Pass {
    /// Inference pass (no dropout).
    pub fn new(params: &ModelParams) -> Self {
        let mut tape = Tape::new();
        let vars = params.tensors().iter().enumerate().map(|(i, m)| tape.param(i, m)).collect();
        Pass {
            tape,
            params: vars,
            dropout: None,
        }
    }

    /// Training pass with dropout `rate` drawn from `rng`.
    pub fn training(params: &ModelParams, rate: f64, rng: ChaCha8Rng) -> Self {
        let mut p = Self::new(params);
        if rate > 0.0 {
            p.dropout = Some((rate, rng));
        }
        p
    }

    pub fn p(&self, id: usize) -> Var {
        self.params[id]
    }

    fn drop(&mut self, v: Var) -> Var {
        match &mut self.dropout {
            Some((rate, rng)) => self.tape.dropout(v, *rate, rng),
            None => v,
        }
    }

    fn linear(&mut self, x: Var, w: usize, b: Option<usize>) -> Var {
        let y = self.tape.matmul(x, self.params[w]);
        match b {
            Some(b) => self.tape.add_bias(y, self.params[b]),
            None => y,
        }
    }

    fn norm(&mut self, x: Var, g: usize, b: usize) -> Var {
        self.tape.layer_norm(x, self.params[g], self.params[b])
    }

    fn debug_finite(&self, h: &HiddenVolume) {
        debug_assert!(self.tape.value(h.var).is_finite(), "non-finite hidden volume");
    }
}

fn bit_column(rows: usize, set: impl Iterator<Item = (usize, bool)>) -> Mat {
    let mut m = Mat::zeros(rows, 1);
    for (r, b) in set {
        m.data[r] = b as u8 as f64;
    }
    m
}

/// Sum of the six per-node embeddings followed by the input projection.
pub fn embed_inputs(
    pass: &mut Pass,
    ids: &super::params::ParamIds,
    geo: &Geometry,
    layout: &CodeLayout,
    records: &[&ShotRecord],
) -> Result<HiddenVolume> {
    let n = geo.nodes;
    let nd = geo.num_data;
    let na = n - nd;
    if records.len() != geo.batch {
        return Err(Error::ShapeMismatch(format!(
            "{} records for a batch of {}",
            records.len(),
            geo.batch
        )));
    }
    for r in records {
        let t = geo.rounds;
        let ok = r.ancilla_outcomes.rows() == t
            && r.ancilla_outcomes.cols() == na
            && r.detectors.rows() == t + 1
            && r.detectors.cols() == na
            && r.final_readout.len() == nd;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "record with {} rounds and {} ancillas does not fit T={t}, d={}",
                r.ancilla_outcomes.rows(),
                r.ancilla_outcomes.cols(),
                layout.distance()
            )));
        }
    }
    let rows = geo.rows();
    let slots = geo.slots();
    let mut meas = Vec::new();
    let mut det = Vec::new();
    let mut node_type = Vec::with_capacity(rows);
    let mut anc_type = Vec::with_capacity(rows);
    let mut task = Vec::with_capacity(rows);
    let mut index = Vec::with_capacity(rows);
    for (b, rec) in records.iter().enumerate() {
        for t in 0..slots {
            for (v, node) in layout.nodes().iter().enumerate() {
                node_type.push(node.kind.is_ancilla() as usize);
                anc_type.push(match node.kind {
                    NodeKind::Data => 0,
                    NodeKind::AncillaX => 1,
                    NodeKind::AncillaZ => 2,
                });
                task.push(rec.basis.code() as usize);
                index.push(v);
                if v < nd {
                    continue;
                }
                let o = v - nd;
                let r = geo.row(b, t, v);
                let m = if t < geo.rounds {
                    rec.ancilla_outcomes.get(t, o)
                } else {
                    layout.ancilla_basis(o) == rec.basis
                        && layout.support(o).iter().fold(false, |acc, &q| acc ^ rec.final_readout[q])
                };
                meas.push((r, m));
                det.push((r, rec.detectors.get(t, o)));
            }
        }
    }
    let tape = &mut pass.tape;
    let meas = tape.input(bit_column(rows, meas.into_iter()));
    let det = tape.input(bit_column(rows, det.into_iter()));
    let mut e = tape.matmul(meas, pass.params[ids.emb_meas]);
    let d = tape.matmul(det, pass.params[ids.emb_det]);
    e = tape.add(e, d);
    for (table, ix) in [
        (ids.emb_node_type, node_type),
        (ids.emb_anc_type, anc_type),
        (ids.emb_task, task),
        (ids.emb_node_index, index),
    ] {
        let g = tape.gather(pass.params[table], &Arc::new(ix));
        e = tape.add(e, g);
    }
    let h = pass.linear(e, ids.in_w, Some(ids.in_b));
    let out = HiddenVolume {
        var: h,
        batch: geo.batch,
        slots,
        nodes: n,
        width: pass.tape.value(h).cols,
    };
    pass.debug_finite(&out);
    Ok(out)
}

/// Message passing over Tanner edges within each slot, pre-normalized with
/// a residual: `h + W_o silu(W_s x + W_n sum_nbr silu(W_m x))`.
pub fn local_gnn_layer(pass: &mut Pass, ids: &GnnIds, geo: &Geometry, h: HiddenVolume) -> HiddenVolume {
    let x = pass.norm(h.var, ids.ln_g, ids.ln_b);
    let m = pass.linear(x, ids.w_msg, Some(ids.b_msg));
    let m = pass.tape.silu(m);
    let agg = pass.tape.spmm(&geo.adjacency, m);
    let s = pass.linear(x, ids.w_self, None);
    let nb = pass.linear(agg, ids.w_nbr, Some(ids.b_upd));
    let u = pass.tape.add(s, nb);
    let u = pass.tape.silu(u);
    let o = pass.linear(u, ids.w_out, Some(ids.b_out));
    let o = pass.drop(o);
    let out = HiddenVolume {
        var: pass.tape.add(h.var, o),
        ..h
    };
    pass.debug_finite(&out);
    out
}

/// Gated fusion of a round-axis convolution `A` and round-axis attention `B`:
/// `h + g * A + (1 - g) * B` with `g = sigmoid(A W_a + B W_b + c)`.
pub fn temporal_mixing(pass: &mut Pass, ids: &TemporalIds, geo: &Geometry, h: HiddenVolume) -> HiddenVolume {
    let x = pass.norm(h.var, ids.ln_g, ids.ln_b);
    let mut a: Option<Var> = None;
    for (shift, &w) in geo.shifts.iter().zip(&ids.conv) {
        let xs = pass.tape.spmm(shift, x);
        let term = pass.linear(xs, w, None);
        a = Some(match a {
            Some(acc) => pass.tape.add(acc, term),
            None => term,
        });
    }
    let a = a.expect("kernel has at least one tap");
    let a = pass.tape.add_bias(a, pass.params[ids.conv_b]);
    let a = pass.drop(a);
    let q = pass.linear(x, ids.wq, None);
    let k = pass.linear(x, ids.wk, None);
    let v = pass.linear(x, ids.wv, None);
    let att = pass.tape.attention(q, k, v, None, &geo.temporal);
    let b = pass.linear(att, ids.wo, None);
    let b = pass.drop(b);
    let ga = pass.linear(a, ids.gate_a, None);
    let gb = pass.linear(b, ids.gate_b, Some(ids.gate_bias));
    let g = pass.tape.add(ga, gb);
    let g = pass.tape.sigmoid(g);
    let fused = pass.tape.lerp(g, a, b);
    let out = HiddenVolume {
        var: pass.tape.add(h.var, fused),
        ..h
    };
    pass.debug_finite(&out);
    out
}

/// Attention over all nodes of each slot with a learned per-head bias on
/// the clipped Tanner distance.
pub fn global_spatial_attention(pass: &mut Pass, ids: &SpatialIds, geo: &Geometry, h: HiddenVolume) -> HiddenVolume {
    let x = pass.norm(h.var, ids.ln_g, ids.ln_b);
    let q = pass.linear(x, ids.wq, None);
    let k = pass.linear(x, ids.wk, None);
    let v = pass.linear(x, ids.wv, None);
    let bias = pass.params[ids.dist_bias];
    let att = pass.tape.attention(q, k, v, Some(bias), &geo.spatial);
    let o = pass.linear(att, ids.wo, Some(ids.b_out));
    let o = pass.drop(o);
    let out = HiddenVolume {
        var: pass.tape.add(h.var, o),
        ..h
    };
    pass.debug_finite(&out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{Experiment, NoiseParams};
    use crate::lattice::{build_layout, shortest_distances, Basis};
    use crate::stgnn::config::ModelConfig;
    use crate::stgnn::params::param_ids;
    use rand::SeedableRng;

    fn small() -> (CodeLayout, DistanceMatrix, ModelConfig) {
        let l = build_layout(3).unwrap();
        let d = shortest_distances(&l, 8);
        let c = ModelConfig {
            hidden: 8,
            heads: 2,
            ..Default::default()
        };
        (l, d, c)
    }

    fn record(l: &CodeLayout, t: usize, seed: u64) -> ShotRecord {
        let e = Experiment::new(l, NoiseParams::uniform(0.05).unwrap(), t, Basis::Z).unwrap();
        e.run(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn embed(l: &CodeLayout, d: &DistanceMatrix, c: &ModelConfig, p: &ModelParams, rec: &ShotRecord) -> Mat {
        let ids = param_ids(c, l.num_nodes());
        let geo = Geometry::new(l, d, rec.rounds(), 1, c.kernel, c.heads).unwrap();
        let mut pass = Pass::new(p);
        let h = embed_inputs(&mut pass, &ids, &geo, l, &[rec]).unwrap();
        assert_eq!(h.shape(), [1, rec.rounds() + 1, 17, 8]);
        pass.tape.value(h.var).clone()
    }

    #[test]
    fn embedding_is_local() {
        let (l, d, c) = small();
        let p = ModelParams::init(&c, 17).unwrap();
        let rec = record(&l, 3, 1);
        let base = embed(&l, &d, &c, &p, &rec);
        let mut flipped = rec.clone();
        flipped.detectors.flip(2, 5);
        let other = embed(&l, &d, &c, &p, &flipped);
        let changed: Vec<usize> = (0..base.rows).filter(|&r| base.row(r) != other.row(r)).collect();
        assert_eq!(changed, vec![2 * 17 + 9 + 5]);
    }

    #[test]
    fn zero_record_gives_positional_embedding() {
        let (l, d, c) = small();
        let p = ModelParams::init(&c, 17).unwrap();
        let mut rec = record(&l, 3, 2);
        rec.ancilla_outcomes = crate::bits::BitMatrix::zeros(3, 8);
        rec.detectors = crate::bits::BitMatrix::zeros(4, 8);
        rec.final_readout = vec![false; 9];
        let e = embed(&l, &d, &c, &p, &rec);
        // Input-independent part: identical across slots.
        for t in 1..4 {
            for v in 0..17 {
                assert_eq!(e.row(t * 17 + v), e.row(v));
            }
        }
    }

    #[test]
    fn kernel_longer_than_volume_rejected() {
        let (l, d, _) = small();
        assert!(Geometry::new(&l, &d, 1, 1, 3, 2).is_err());
        assert!(Geometry::new(&l, &d, 2, 1, 3, 2).is_ok());
    }

    #[test]
    fn zero_weight_gnn_is_residual_identity() {
        let (l, d, c) = small();
        let mut p = ModelParams::init(&c, 17).unwrap();
        let ids = param_ids(&c, 17);
        let g = &ids.blocks[0].gnn;
        for id in [g.w_out, g.b_out] {
            p.get_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let rec = record(&l, 3, 3);
        let geo = Geometry::new(&l, &d, 3, 1, c.kernel, c.heads).unwrap();
        let mut pass = Pass::new(&p);
        let h = embed_inputs(&mut pass, &ids, &geo, &l, &[&rec]).unwrap();
        let out = local_gnn_layer(&mut pass, g, &geo, h);
        assert_eq!(pass.tape.value(out.var), pass.tape.value(h.var));
    }

    #[test]
    fn gnn_sees_neighbour_clicks() {
        let (l, d, c) = small();
        let p = ModelParams::init(&c, 17).unwrap();
        let ids = param_ids(&c, 17);
        let geo = Geometry::new(&l, &d, 3, 1, c.kernel, c.heads).unwrap();
        let run = |rec: &ShotRecord| {
            let mut pass = Pass::new(&p);
            let h = embed_inputs(&mut pass, &ids, &geo, &l, &[rec]).unwrap();
            let out = local_gnn_layer(&mut pass, &ids.blocks[0].gnn, &geo, h);
            pass.tape.value(out.var).clone()
        };
        let rec = record(&l, 3, 4);
        let mut other = rec.clone();
        let o = 0;
        other.detectors.flip(1, o);
        let (a, b) = (run(&rec), run(&other));
        // A data neighbour of the flipped ancilla changes in that slot only.
        let q = l.support(o)[0];
        assert_ne!(a.row(17 + q), b.row(17 + q));
        assert_eq!(a.row(q), b.row(q));
    }

    #[test]
    fn gate_limits_select_branches() {
        let (l, d, c) = small();
        let ids = param_ids(&c, 17);
        let rec = record(&l, 4, 5);
        let geo = Geometry::new(&l, &d, 4, 1, c.kernel, c.heads).unwrap();
        let t = &ids.blocks[0].temporal;
        let run = |p: &ModelParams| {
            let mut pass = Pass::new(p);
            let h = embed_inputs(&mut pass, &ids, &geo, &l, &[&rec]).unwrap();
            let out = temporal_mixing(&mut pass, t, &geo, h);
            pass.tape.value(out.var).clone()
        };
        // g = 1 discards the attention branch, g = 0 the convolution branch.
        let mut conv_only = t.conv.clone();
        conv_only.push(t.conv_b);
        for (bias, discarded) in [(1e6, vec![t.wo]), (-1e6, conv_only)] {
            let mut p = ModelParams::init(&c, 17).unwrap();
            p.get_mut(t.gate_bias).data.iter_mut().for_each(|x| *x = bias);
            let mut q = p.clone();
            for id in discarded {
                q.get_mut(id).data.iter_mut().for_each(|x| *x = 2.0 * *x + 0.1);
            }
            assert_eq!(run(&p), run(&q));
        }
    }

    #[test]
    fn strong_self_bias_collapses_attention() {
        let (l, d, c) = small();
        let ids = param_ids(&c, 17);
        let mut p = ModelParams::init(&c, 17).unwrap();
        let s = &ids.blocks[0].spatial;
        let table = p.get_mut(s.dist_bias);
        for h in 0..table.rows {
            for k in 1..table.cols {
                table.data[h * table.cols + k] = -1e4;
            }
        }
        let rec = record(&l, 3, 6);
        let geo = Geometry::new(&l, &d, 3, 1, c.kernel, c.heads).unwrap();
        let mut pass = Pass::new(&p);
        let h = embed_inputs(&mut pass, &ids, &geo, &l, &[&rec]).unwrap();
        let _ = global_spatial_attention(&mut pass, s, &geo, h);
        let maps = pass.tape.attention_maps();
        assert_eq!(maps.len(), 1);
        for (i, row) in maps[0].chunks(17).enumerate() {
            assert!((row[i % 17] - 1.0).abs() < 1e-6);
        }
    }
}
