use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::tape::Mat;
use crate::error::{Error, Result};

/// Parameter ids of one local GNN layer.
#[derive(Clone, Debug)]
pub struct GnnIds {
    pub ln_g: usize,
    pub ln_b: usize,
    pub w_msg: usize,
    pub b_msg: usize,
    pub w_self: usize,
    pub w_nbr: usize,
    pub b_upd: usize,
    pub w_out: usize,
    pub b_out: usize,
}

/// Parameter ids of one temporal mixing layer.
#[derive(Clone, Debug)]
pub struct TemporalIds {
    pub ln_g: usize,
    pub ln_b: usize,
    /// One `D x D` matrix per kernel tap, offset `-k/2 ..= k/2`.
    pub conv: Vec<usize>,
    pub conv_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub gate_a: usize,
    pub gate_b: usize,
    pub gate_bias: usize,
}

/// Parameter ids of one global spatial attention layer.
#[derive(Clone, Debug)]
pub struct SpatialIds {
    pub ln_g: usize,
    pub ln_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub b_out: usize,
    /// `heads x (distance_cap + 1)`.
    pub dist_bias: usize,
}

#[derive(Clone, Debug)]
pub struct BlockIds {
    pub gnn: GnnIds,
    pub temporal: TemporalIds,
    pub spatial: SpatialIds,
}

#[derive(Clone, Debug)]
pub struct ParamIds {
    pub emb_meas: usize,
    pub emb_det: usize,
    pub emb_node_type: usize,
    pub emb_anc_type: usize,
    pub emb_task: usize,
    pub emb_node_index: usize,
    pub in_w: usize,
    pub in_b: usize,
    pub blocks: Vec<BlockIds>,
    pub final_ln_g: usize,
    pub final_ln_b: usize,
    pub logic_w_obs: usize,
    pub logic_w_glob: usize,
    pub logic_b1: usize,
    pub logic_w2: usize,
    pub logic_b2: usize,
    pub loss_w1: usize,
    pub loss_b1: usize,
    pub loss_w2: usize,
    pub loss_b2: usize,
}

impl ParamIds {
    /// Ids used only by the logical head.
    pub fn logic_head(&self) -> [usize; 5] {
        [self.logic_w_obs, self.logic_w_glob, self.logic_b1, self.logic_w2, self.logic_b2]
    }

    /// Ids used only by the loss head.
    pub fn loss_head(&self) -> [usize; 4] {
        [self.loss_w1, self.loss_b1, self.loss_w2, self.loss_b2]
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Zeros,
    Ones,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out)) * gain`.
    Glorot(f64),
    Normal(f64),
}

/// Named parameter tensors with a fixed, config-derived order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Mat>,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize, Init)>,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name.into());
        self.shapes.push((rows, cols, init));
        self.names.len() - 1
    }
}

fn plan(config: &ModelConfig, num_nodes: usize) -> (Builder, ParamIds) {
    let dm = config.hidden;
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
    };
    let emb = Init::Normal(0.5);
    let emb_meas = b.add("embed.measurement", 1, dm, emb);
    let emb_det = b.add("embed.detector", 1, dm, emb);
    let emb_node_type = b.add("embed.node_type", 2, dm, emb);
    let emb_anc_type = b.add("embed.ancilla_type", 3, dm, emb);
    let emb_task = b.add("embed.task", 2, dm, emb);
    let emb_node_index = b.add("embed.node_index", num_nodes, dm, emb);
    let in_w = b.add("embed.in_w", dm, dm, Init::Glorot(1.0));
    let in_b = b.add("embed.in_b", 1, dm, Init::Zeros);
    // Residual outputs start small so early blocks stay close to identity.
    let out_gain = 0.5;
    let mut blocks = Vec::new();
    for i in 0..config.blocks {
        let p = |s: &str| format!("block{i}.{s}");
        let gnn = GnnIds {
            ln_g: b.add(p("gnn.ln_g"), 1, dm, Init::Ones),
            ln_b: b.add(p("gnn.ln_b"), 1, dm, Init::Zeros),
            w_msg: b.add(p("gnn.w_msg"), dm, dm, Init::Glorot(1.0)),
            b_msg: b.add(p("gnn.b_msg"), 1, dm, Init::Zeros),
            w_self: b.add(p("gnn.w_self"), dm, dm, Init::Glorot(1.0)),
            w_nbr: b.add(p("gnn.w_nbr"), dm, dm, Init::Glorot(0.5)),
            b_upd: b.add(p("gnn.b_upd"), 1, dm, Init::Zeros),
            w_out: b.add(p("gnn.w_out"), dm, dm, Init::Glorot(out_gain)),
            b_out: b.add(p("gnn.b_out"), 1, dm, Init::Zeros),
        };
        let temporal = TemporalIds {
            ln_g: b.add(p("temporal.ln_g"), 1, dm, Init::Ones),
            ln_b: b.add(p("temporal.ln_b"), 1, dm, Init::Zeros),
            conv: (0..config.kernel)
                .map(|k| b.add(p(&format!("temporal.conv{k}")), dm, dm, Init::Glorot(out_gain)))
                .collect(),
            conv_b: b.add(p("temporal.conv_b"), 1, dm, Init::Zeros),
            wq: b.add(p("temporal.wq"), dm, dm, Init::Glorot(1.0)),
            wk: b.add(p("temporal.wk"), dm, dm, Init::Glorot(1.0)),
            wv: b.add(p("temporal.wv"), dm, dm, Init::Glorot(1.0)),
            wo: b.add(p("temporal.wo"), dm, dm, Init::Glorot(out_gain)),
            gate_a: b.add(p("temporal.gate_a"), dm, dm, Init::Glorot(1.0)),
            gate_b: b.add(p("temporal.gate_b"), dm, dm, Init::Glorot(1.0)),
            gate_bias: b.add(p("temporal.gate_bias"), 1, dm, Init::Zeros),
        };
        let spatial = SpatialIds {
            ln_g: b.add(p("spatial.ln_g"), 1, dm, Init::Ones),
            ln_b: b.add(p("spatial.ln_b"), 1, dm, Init::Zeros),
            wq: b.add(p("spatial.wq"), dm, dm, Init::Glorot(1.0)),
            wk: b.add(p("spatial.wk"), dm, dm, Init::Glorot(1.0)),
            wv: b.add(p("spatial.wv"), dm, dm, Init::Glorot(1.0)),
            wo: b.add(p("spatial.wo"), dm, dm, Init::Glorot(out_gain)),
            b_out: b.add(p("spatial.b_out"), 1, dm, Init::Zeros),
            dist_bias: b.add(
                p("spatial.dist_bias"),
                config.heads,
                config.distance_cap as usize + 1,
                Init::Normal(0.1),
            ),
        };
        blocks.push(BlockIds {
            gnn,
            temporal,
            spatial,
        });
    }
    let ids = ParamIds {
        emb_meas,
        emb_det,
        emb_node_type,
        emb_anc_type,
        emb_task,
        emb_node_index,
        in_w,
        in_b,
        blocks,
        final_ln_g: b.add("final.ln_g", 1, dm, Init::Ones),
        final_ln_b: b.add("final.ln_b", 1, dm, Init::Zeros),
        logic_w_obs: b.add("head.logical.w_obs", dm, dm, Init::Glorot(1.0)),
        logic_w_glob: b.add("head.logical.w_glob", dm, dm, Init::Glorot(1.0)),
        logic_b1: b.add("head.logical.b1", 1, dm, Init::Zeros),
        logic_w2: b.add("head.logical.w2", dm, 1, Init::Glorot(1.0)),
        logic_b2: b.add("head.logical.b2", 1, 1, Init::Zeros),
        loss_w1: b.add("head.loss.w1", dm, dm, Init::Glorot(1.0)),
        loss_b1: b.add("head.loss.b1", 1, dm, Init::Zeros),
        loss_w2: b.add("head.loss.w2", dm, 1, Init::Glorot(1.0)),
        loss_b2: b.add("head.loss.b2", 1, 1, Init::Zeros),
    };
    (b, ids)
}

/// Parameter ids for `config` on a layout with `num_nodes` nodes.
pub fn param_ids(config: &ModelConfig, num_nodes: usize) -> ParamIds {
    plan(config, num_nodes).1
}

impl ModelParams {
    /// Seeded initialization.
    pub fn init(config: &ModelConfig, num_nodes: usize) -> Result<Self> {
        config.validate()?;
        let (b, _) = plan(config, num_nodes);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = b
            .shapes
            .iter()
            .map(|&(rows, cols, init)| {
                let data = (0..rows * cols)
                    .map(|_| match init {
                        Init::Zeros => 0.0,
                        Init::Ones => 1.0,
                        Init::Glorot(gain) => {
                            let a = gain * (6.0 / (rows + cols) as f64).sqrt();
                            rng.gen_range(-a..a)
                        }
                        Init::Normal(s) => {
                            // Sum of uniforms: cheap, bounded, variance s^2.
                            let u: f64 = (0..3).map(|_| rng.gen_range(-1.0..1.0)).sum();
                            u * s
                        }
                    })
                    .collect();
                Mat::from_vec(rows, cols, data)
            })
            .collect();
        Ok(ModelParams {
            names: b.names,
            tensors,
        })
    }

    /// Rebuilds parameters from a flat array laid out in plan order.
    pub fn from_flat(config: &ModelConfig, num_nodes: usize, flat: &[f64]) -> Result<Self> {
        config.validate()?;
        let (b, _) = plan(config, num_nodes);
        let total: usize = b.shapes.iter().map(|s| s.0 * s.1).sum();
        if flat.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "parameter array has {} values, configuration needs {total}",
                flat.len()
            )));
        }
        let mut off = 0;
        let tensors = b
            .shapes
            .iter()
            .map(|&(rows, cols, _)| {
                let m = Mat::from_vec(rows, cols, flat[off..off + rows * cols].to_vec());
                off += rows * cols;
                m
            })
            .collect();
        Ok(ModelParams {
            names: b.names,
            tensors,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Mat {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.tensors[id]
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    /// `(name, offset, rows, cols)` per tensor in flat order.
    pub fn manifest(&self) -> Vec<(String, usize, usize, usize)> {
        let mut off = 0;
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                let e = (n.clone(), off, t.rows, t.cols);
                off += t.len();
                e
            })
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Mat::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::default();
        let a = ModelParams::init(&c, 17).unwrap();
        assert_eq!(a, ModelParams::init(&c, 17).unwrap());
        let b = ModelParams::init(&ModelConfig { seed: 1, ..c }, 17).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn flat_roundtrip_and_manifest() {
        let c = ModelConfig {
            hidden: 8,
            heads: 2,
            ..Default::default()
        };
        let p = ModelParams::init(&c, 17).unwrap();
        let flat = p.flatten();
        assert_eq!(ModelParams::from_flat(&c, 17, &flat).unwrap(), p);
        let m = p.manifest();
        let last = m.last().unwrap();
        assert_eq!(last.1 + last.2 * last.3, flat.len());
        assert!(ModelParams::from_flat(&c, 17, &flat[1..]).is_err());
        let names: std::collections::HashSet<_> = m.iter().map(|e| &e.0).collect();
        assert_eq!(names.len(), m.len(), "names are unique");
    }
}
