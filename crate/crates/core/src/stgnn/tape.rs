//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays it in reverse. Parameters enter as [`Tape::param`] leaves and their
//! gradients are returned indexed by parameter id.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use rand::Rng;

// Freshly mapped pages are expensive to touch, so large matrix buffers are
// recycled through a per-thread pool instead of going back to the allocator.
const POOL_MIN_LEN: usize = 1 << 10;
const POOL_MAX_ELEMS: usize = 1 << 25;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
    static POOLED: Cell<usize> = const { Cell::new(0) };
}

/// Empty buffer with capacity at least `n`.
/// Copies columns `cols` of the rows in `group` into a contiguous block.
fn gather_head(m: &Mat, group: &[usize], cols: std::ops::Range<usize>, out: &mut Vec<f64>) {
    out.clear();
    for &r in group {
        out.extend_from_slice(&m.row(r)[cols.clone()]);
    }
}

fn scatter_head(block: &[f64], group: &[usize], cols: std::ops::Range<usize>, m: &mut Mat) {
    let w = cols.len();
    for (i, &r) in group.iter().enumerate() {
        m.row_mut(r)[cols.clone()].iter_mut().zip(&block[i * w..(i + 1) * w]).for_each(|(d, s)| *d += s);
    }
}

fn buffer(n: usize) -> Vec<f64> {
    if n < POOL_MIN_LEN {
        return Vec::with_capacity(n);
    }
    let reused = POOL
        .try_with(|p| {
            let mut p = p.borrow_mut();
            let best = p
                .iter()
                .enumerate()
                .filter(|(_, b)| b.capacity() >= n)
                .min_by_key(|(_, b)| b.capacity())
                .map(|(i, _)| i)?;
            let b = p.swap_remove(best);
            POOLED.with(|c| c.set(c.get() - b.capacity()));
            Some(b)
        })
        .ok()
        .flatten();
    match reused {
        Some(mut b) => {
            b.clear();
            b
        }
        None => Vec::with_capacity(n),
    }
}

fn recycle(b: Vec<f64>) {
    let cap = b.capacity();
    if cap < POOL_MIN_LEN {
        return;
    }
    let _ = POOL.try_with(|p| {
        POOLED.with(|c| {
            if c.get() + cap <= POOL_MAX_ELEMS {
                c.set(c.get() + cap);
                p.borrow_mut().push(b);
            }
        })
    });
}

#[derive(Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Clone for Mat {
    fn clone(&self) -> Self {
        let mut data = buffer(self.data.len());
        data.extend_from_slice(&self.data);
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

impl Drop for Mat {
    fn drop(&mut self) {
        recycle(std::mem::take(&mut self.data));
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let mut data = buffer(rows * cols);
        data.resize(rows * cols, 0.0);
        Mat { rows, cols, data }
    }

    /// Matrix filled from a row-major iterator of exactly `rows * cols` values.
    pub fn from_iter(rows: usize, cols: usize, values: impl IntoIterator<Item = f64>) -> Self {
        let mut data = buffer(rows * cols);
        data.extend(values);
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// `c = op(a) * op(b) + beta * c`, where `op` optionally transposes.
pub fn gemm(a: &Mat, ta: bool, b: &Mat, tb: bool, c: &mut Mat, beta: f64) {
    let (m, k, rsa, csa) = if ta {
        (a.cols, a.rows, 1, a.cols)
    } else {
        (a.rows, a.cols, a.cols, 1)
    };
    let (kb, n, rsb, csb) = if tb {
        (b.cols, b.rows, 1, b.cols)
    } else {
        (b.rows, b.cols, b.cols, 1)
    };
    assert_eq!(k, kb, "inner dimensions");
    assert_eq!((c.rows, c.cols), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides and extents describe the three buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// Fixed sparse matrix in compressed-row form.
#[derive(Clone, Debug)]
pub struct Sparse {
    pub rows: usize,
    pub cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Sparse {
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            assert!(r < rows && c < cols, "sparse entry out of range");
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Sparse {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul(&self, a: &Mat) -> Mat {
        assert_eq!(self.cols, a.rows, "sparse product shape");
        let mut out = Mat::zeros(self.rows, a.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * a.cols..(r + 1) * a.cols];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[p];
                for (d, s) in dst.iter_mut().zip(a.row(self.indices[p])) {
                    *d += v * s;
                }
            }
        }
        out
    }

    /// `acc += selfᵀ * g`.
    fn mul_t_acc(&self, g: &Mat, acc: &mut Mat) {
        for r in 0..self.rows {
            let src = g.row(r);
            for p in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[p];
                let c = self.indices[p];
                for (d, s) in acc.row_mut(c).iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }
}

/// Grouped multi-head attention layout: rows in the same group attend to
/// each other. With `buckets`, every group has the same size `g` and the
/// logit of `(i, j)` gets `bias[head, buckets[i * g + j]]`.
#[derive(Clone, Debug)]
pub struct AttnSpec {
    pub groups: Vec<Vec<usize>>,
    pub heads: usize,
    pub buckets: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Lerp(usize, usize, usize),
    Sigmoid(usize),
    Silu(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Mat,
        inv: Vec<f64>,
    },
    SpMM(Arc<Sparse>, usize),
    Gather(usize, Arc<Vec<usize>>),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        bias: Option<usize>,
        spec: Arc<AttnSpec>,
        probs: Mat,
    },
    Bce {
        logits: usize,
        targets: Vec<f64>,
        weights: Vec<f64>,
        norm: f64,
    },
    Scale(usize, f64),
    Dropout(usize, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    /// Leaf for parameter `id`; its gradient is reported under that id.
    pub fn param(&mut self, id: usize, value: &Mat) -> Var {
        self.push(value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = Mat::zeros(av.rows, bv.cols);
        gemm(av, false, bv, false, &mut out, 0.0);
        self.push(out, Op::MatMul(a.0, b.0))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let bv = &self.nodes[bias.0].value;
        assert_eq!((bv.rows, bv.cols), (1, self.nodes[a.0].value.cols), "bias shape");
        let mut out = self.nodes[a.0].value.clone();
        let cols = out.cols;
        for row in out.data.chunks_mut(cols) {
            row.iter_mut().zip(&bv.data).for_each(|(x, b)| *x += b);
        }
        self.push(out, Op::AddBias(a.0, bias.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.nodes[a.0].value.clone();
        out.add_assign(&self.nodes[b.0].value);
        self.push(out, Op::Add(a.0, b.0))
    }

    /// `g * a + (1 - g) * b`, elementwise.
    pub fn lerp(&mut self, g: Var, a: Var, b: Var) -> Var {
        let (gv, av, bv) = (&self.nodes[g.0].value, &self.nodes[a.0].value, &self.nodes[b.0].value);
        let values = gv.data.iter().zip(&av.data).zip(&bv.data).map(|((g, a), b)| g * a + (1.0 - g) * b);
        let out = Mat::from_iter(gv.rows, gv.cols, values);
        self.push(out, Op::Lerp(g.0, a.0, b.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let out = Mat::from_iter(av.rows, av.cols, av.data.iter().map(|&x| sigmoid(x)));
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let out = Mat::from_iter(av.rows, av.cols, av.data.iter().map(|&x| x * sigmoid(x)));
        self.push(out, Op::Silu(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let out = Mat::from_iter(av.rows, av.cols, av.data.iter().map(|&x| c * x));
        self.push(out, Op::Scale(a.0, c))
    }

    /// Row-wise normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (g, b) = (&self.nodes[gamma.0].value, &self.nodes[beta.0].value);
        let n = xv.cols as f64;
        let mut xhat = Mat::zeros(xv.rows, xv.cols);
        let mut inv = vec![0.0; xv.rows];
        let mut out = Mat::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let iv = 1.0 / (var + LN_EPS).sqrt();
            inv[r] = iv;
            let xh = xhat.row_mut(r);
            let o = out.row_mut(r);
            for c in 0..row.len() {
                xh[c] = (row[c] - mean) * iv;
                o[c] = xh[c] * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv,
            },
        )
    }

    pub fn spmm(&mut self, s: &Arc<Sparse>, a: Var) -> Var {
        let out = s.mul(&self.nodes[a.0].value);
        self.push(out, Op::SpMM(Arc::clone(s), a.0))
    }

    /// Row `i` of the output is row `indices[i]` of `table`.
    pub fn gather(&mut self, table: Var, indices: &Arc<Vec<usize>>) -> Var {
        let tv = &self.nodes[table.0].value;
        let mut out = Mat::zeros(indices.len(), tv.cols);
        for (i, &ix) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(tv.row(ix));
        }
        self.push(out, Op::Gather(table.0, Arc::clone(indices)))
    }

    /// Inverted dropout; `rate = 0` records an identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let av = &self.nodes[a.0].value;
        let keep = 1.0 / (1.0 - rate);
        let mask = Mat::from_iter(
            av.rows,
            av.cols,
            (0..av.len()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }),
        );
        let out = Mat::from_iter(av.rows, av.cols, av.data.iter().zip(&mask.data).map(|(x, m)| x * m));
        self.push(out, Op::Dropout(a.0, mask))
    }

    /// Multi-head scaled dot-product attention within row groups.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, bias: Option<Var>, spec: &Arc<AttnSpec>) -> Var {
        let (qv, kv, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let dim = qv.cols;
        let heads = spec.heads;
        assert_eq!(dim % heads, 0, "width must divide into heads");
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let bias_table = bias.map(|b| &self.nodes[b.0].value);
        let mut out = Mat::zeros(qv.rows, dim);
        let total: usize = spec.groups.iter().map(|g| g.len() * g.len()).sum::<usize>() * heads;
        let mut probs = buffer(total);
        probs.resize(total, 0.0);
        let mut off = 0;
        let (mut qh, mut kh, mut vh, mut oh) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for group in &spec.groups {
            let g = group.len();
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                gather_head(qv, group, cols.clone(), &mut qh);
                gather_head(kv, group, cols.clone(), &mut kh);
                gather_head(vv, group, cols.clone(), &mut vh);
                oh.clear();
                oh.resize(g * dh, 0.0);
                let p = &mut probs[off..off + g * g];
                for i in 0..g {
                    let qi = &qh[i * dh..(i + 1) * dh];
                    let row = &mut p[i * g..(i + 1) * g];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &kh[j * dh..(j + 1) * dh];
                        *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    if let (Some(t), Some(b)) = (bias_table, &spec.buckets) {
                        let tr = t.row(h);
                        row.iter_mut().zip(&b[i * g..(i + 1) * g]).for_each(|(s, &k)| *s += tr[k]);
                    }
                    let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - top).exp();
                        z += *s;
                    }
                    let inv = 1.0 / z;
                    let oi = &mut oh[i * dh..(i + 1) * dh];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s *= inv;
                        let vj = &vh[j * dh..(j + 1) * dh];
                        oi.iter_mut().zip(vj).for_each(|(o, v)| *o += *s * v);
                    }
                }
                for (i, &r) in group.iter().enumerate() {
                    out.row_mut(r)[cols.clone()].copy_from_slice(&oh[i * dh..(i + 1) * dh]);
                }
                off += g * g;
            }
        }
        self.push(
            out,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                bias: bias.map(|b| b.0),
                spec: Arc::clone(spec),
                probs: Mat::from_vec(1, total, probs),
            },
        )
    }

    /// Attention probabilities of an attention node, group-major then head,
    /// query and key.
    pub fn attention_probs(&self, a: Var) -> Option<&[f64]> {
        match &self.nodes[a.0].op {
            Op::Attention { probs, .. } => Some(&probs.data),
            _ => None,
        }
    }

    /// Probabilities of every attention node, in recording order.
    pub fn attention_maps(&self) -> Vec<&[f64]> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Attention { probs, .. } => Some(probs.data.as_slice()),
                _ => None,
            })
            .collect()
    }

    /// `sum_i w_i * BCE(sigmoid(z_i), y_i) / norm` as a `1 x 1` matrix.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>, weights: Vec<f64>, norm: f64) -> Var {
        let zv = &self.nodes[logits.0].value;
        assert_eq!(zv.len(), targets.len(), "one target per logit");
        assert_eq!(zv.len(), weights.len(), "one weight per logit");
        let total: f64 = zv
            .data
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&z, &y), &w)| w * (softplus(z) - y * z))
            .sum::<f64>()
            / norm;
        self.push(
            Mat::from_vec(1, 1, vec![total]),
            Op::Bce {
                logits: logits.0,
                targets,
                weights,
                norm,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to each parameter id in
    /// `0..num_params`; unused parameters get `None`.
    pub fn backward(&self, loss: Var, num_params: usize) -> Vec<Option<Mat>> {
        let lv = &self.nodes[loss.0].value;
        assert_eq!((lv.rows, lv.cols), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        let mut params: Vec<Option<Mat>> = (0..num_params).map(|_| None).collect();

        fn slot<'a>(grads: &'a mut [Option<Mat>], nodes: &[Node], i: usize) -> &'a mut Mat {
            grads[i].get_or_insert_with(|| {
                let v = &nodes[i].value;
                Mat::zeros(v.rows, v.cols)
            })
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            match &nodes[i].op {
                Op::Input => {}
                Op::Param(id) => match &mut params[*id] {
                    Some(acc) => acc.add_assign(&g),
                    none => *none = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    gemm(&g, false, bv, true, slot(&mut grads, nodes, *a), 1.0);
                    gemm(av, true, &g, false, slot(&mut grads, nodes, *b), 1.0);
                }
                Op::AddBias(a, b) => {
                    slot(&mut grads, nodes, *a).add_assign(&g);
                    let gb = slot(&mut grads, nodes, *b);
                    for row in g.data.chunks(g.cols) {
                        gb.data.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                    }
                }
                Op::Add(a, b) => {
                    slot(&mut grads, nodes, *a).add_assign(&g);
                    slot(&mut grads, nodes, *b).add_assign(&g);
                }
                Op::Lerp(gi, a, b) => {
                    let (gv, av, bv) = (&nodes[*gi].value, &nodes[*a].value, &nodes[*b].value);
                    let dg = slot(&mut grads, nodes, *gi);
                    for k in 0..g.len() {
                        dg.data[k] += g.data[k] * (av.data[k] - bv.data[k]);
                    }
                    let da = slot(&mut grads, nodes, *a);
                    for k in 0..g.len() {
                        da.data[k] += g.data[k] * gv.data[k];
                    }
                    let db = slot(&mut grads, nodes, *b);
                    for k in 0..g.len() {
                        db.data[k] += g.data[k] * (1.0 - gv.data[k]);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &nodes[i].value;
                    let da = slot(&mut grads, nodes, *a);
                    for k in 0..g.len() {
                        da.data[k] += g.data[k] * y.data[k] * (1.0 - y.data[k]);
                    }
                }
                Op::Silu(a) => {
                    let x = &nodes[*a].value;
                    let da = slot(&mut grads, nodes, *a);
                    for k in 0..g.len() {
                        let s = sigmoid(x.data[k]);
                        da.data[k] += g.data[k] * s * (1.0 + x.data[k] * (1.0 - s));
                    }
                }
                Op::Scale(a, c) => {
                    let da = slot(&mut grads, nodes, *a);
                    da.data.iter_mut().zip(&g.data).for_each(|(d, s)| *d += c * s);
                }
                Op::Dropout(a, mask) => {
                    let da = slot(&mut grads, nodes, *a);
                    for k in 0..g.len() {
                        da.data[k] += g.data[k] * mask.data[k];
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv,
                } => {
                    let cols = g.cols;
                    let n = cols as f64;
                    let gam = &nodes[*gamma].value.data;
                    let mut dgam = vec![0.0; cols];
                    let mut dbet = vec![0.0; cols];
                    let dx = slot(&mut grads, nodes, *x);
                    let mut dxh = vec![0.0; cols];
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..cols {
                            dgam[c] += gr[c] * xh[c];
                            dbet[c] += gr[c];
                            dxh[c] = gr[c] * gam[c];
                            s1 += dxh[c];
                            s2 += dxh[c] * xh[c];
                        }
                        let f = inv[r] / n;
                        let out = dx.row_mut(r);
                        for c in 0..cols {
                            out[c] += f * (n * dxh[c] - s1 - xh[c] * s2);
                        }
                    }
                    slot(&mut grads, nodes, *gamma)
                        .data
                        .iter_mut()
                        .zip(&dgam)
                        .for_each(|(d, s)| *d += s);
                    slot(&mut grads, nodes, *beta)
                        .data
                        .iter_mut()
                        .zip(&dbet)
                        .for_each(|(d, s)| *d += s);
                }
                Op::SpMM(s, a) => s.mul_t_acc(&g, slot(&mut grads, nodes, *a)),
                Op::Gather(t, indices) => {
                    let dt = slot(&mut grads, nodes, *t);
                    for (r, &ix) in indices.iter().enumerate() {
                        dt.row_mut(ix).iter_mut().zip(g.row(r)).for_each(|(d, s)| *d += s);
                    }
                }
                Op::Bce {
                    logits,
                    targets,
                    weights,
                    norm,
                } => {
                    let z = &nodes[*logits].value;
                    let up = g.data[0] / norm;
                    let dz = slot(&mut grads, nodes, *logits);
                    for k in 0..z.len() {
                        dz.data[k] += up * weights[k] * (sigmoid(z.data[k]) - targets[k]);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    bias,
                    spec,
                    probs,
                } => {
                    let (qv, kv, vv) = (&nodes[*q].value, &nodes[*k].value, &nodes[*v].value);
                    let dim = qv.cols;
                    let heads = spec.heads;
                    let dh = dim / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Mat::zeros(qv.rows, dim);
                    let mut dk = Mat::zeros(kv.rows, dim);
                    let mut dv = Mat::zeros(vv.rows, dim);
                    let mut dbias = bias.map(|b| Mat::zeros(nodes[b].value.rows, nodes[b].value.cols));
                    let mut off = 0;
                    let (mut qh, mut kh, mut vh, mut gh) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                    let (mut dqh, mut dkh, mut dvh, mut ds) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                    for group in &spec.groups {
                        let gs = group.len();
                        for h in 0..heads {
                            let cols = h * dh..(h + 1) * dh;
                            gather_head(qv, group, cols.clone(), &mut qh);
                            gather_head(kv, group, cols.clone(), &mut kh);
                            gather_head(vv, group, cols.clone(), &mut vh);
                            gather_head(&g, group, cols.clone(), &mut gh);
                            for buf in [&mut dqh, &mut dkh, &mut dvh] {
                                buf.clear();
                                buf.resize(gs * dh, 0.0);
                            }
                            ds.clear();
                            ds.resize(gs, 0.0);
                            for i in 0..gs {
                                let p = &probs.data[off + i * gs..off + (i + 1) * gs];
                                let go = &gh[i * dh..(i + 1) * dh];
                                let mut dot = 0.0;
                                for j in 0..gs {
                                    let vj = &vh[j * dh..(j + 1) * dh];
                                    let x = go.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                                    dot += p[j] * x;
                                    ds[j] = x;
                                    let dvj = &mut dvh[j * dh..(j + 1) * dh];
                                    dvj.iter_mut().zip(go).for_each(|(d, s)| *d += p[j] * s);
                                }
                                for j in 0..gs {
                                    let s = p[j] * (ds[j] - dot);
                                    if s == 0.0 {
                                        continue;
                                    }
                                    if let (Some(db), Some(b)) = (&mut dbias, &spec.buckets) {
                                        db.data[h * db.cols + b[i * gs + j]] += s;
                                    }
                                    let c = s * scale;
                                    let kj = &kh[j * dh..(j + 1) * dh];
                                    dqh[i * dh..(i + 1) * dh].iter_mut().zip(kj).for_each(|(d, s)| *d += c * s);
                                    let qi = &qh[i * dh..(i + 1) * dh];
                                    dkh[j * dh..(j + 1) * dh].iter_mut().zip(qi).for_each(|(d, s)| *d += c * s);
                                }
                            }
                            scatter_head(&dqh, group, cols.clone(), &mut dq);
                            scatter_head(&dkh, group, cols.clone(), &mut dk);
                            scatter_head(&dvh, group, cols, &mut dv);
                            off += gs * gs;
                        }
                    }
                    slot(&mut grads, nodes, *q).add_assign(&dq);
                    slot(&mut grads, nodes, *k).add_assign(&dk);
                    slot(&mut grads, nodes, *v).add_assign(&dv);
                    if let (Some(b), Some(db)) = (bias, dbias) {
                        slot(&mut grads, nodes, *b).add_assign(&db);
                    }
                }
            }
        }
        params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Checks d(loss)/d(param) for every entry of every parameter.
    fn check(params: &mut [Mat], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let run = |params: &[Mat]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| t.param(i, p)).collect();
            let l = f(&mut t, &vars);
            (t, l)
        };
        let (t, l) = run(params);
        let grads = t.backward(l, params.len());
        let h = 1e-5;
        for pi in 0..params.len() {
            let g = grads[pi].as_ref().expect("gradient present");
            for k in 0..params[pi].len() {
                let orig = params[pi].data[k];
                params[pi].data[k] = orig + h;
                let (tp, lp) = run(params);
                params[pi].data[k] = orig - h;
                let (tm, lm) = run(params);
                params[pi].data[k] = orig;
                let num = (tp.value(lp).data[0] - tm.value(lm).data[0]) / (2.0 * h);
                let err = (num - g.data[k]).abs() / num.abs().max(g.data[k].abs()).max(1e-6);
                assert!(err < 1e-5, "param {pi}[{k}]: analytic {} numeric {num}", g.data[k]);
            }
        }
    }

    /// Projects onto a column with unequal weights, then a weighted BCE.
    fn reduce(t: &mut Tape, x: Var) -> Var {
        let cols = t.value(x).cols;
        let w = t.input(Mat::from_vec(cols, 1, (0..cols).map(|c| 0.5 + c as f64 * 0.3).collect()));
        let z = t.matmul(x, w);
        let m = t.value(z).len();
        let targets = (0..m).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let weights = (0..m).map(|i| 1.0 + (i % 2) as f64).collect();
        t.bce_with_logits(z, targets, weights, m as f64)
    }

    #[test]
    fn dense_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = vec![
            random(5, 4, &mut rng),
            random(4, 4, &mut rng),
            random(1, 4, &mut rng),
            random(1, 4, &mut rng),
            random(1, 4, &mut rng),
            random(5, 4, &mut rng),
        ];
        check(&mut p, |t, v| {
            let a = t.matmul(v[0], v[1]);
            let a = t.add_bias(a, v[2]);
            let n = t.layer_norm(a, v[3], v[4]);
            let s = t.silu(n);
            let g = t.sigmoid(v[5]);
            let l = t.lerp(g, s, v[5]);
            let l = t.add(l, a);
            let l = t.scale(l, 0.7);
            reduce(t, l)
        });
    }

    #[test]
    fn sparse_and_gather_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Arc::new(Sparse::from_triplets(3, 4, vec![(0, 1, 2.0), (0, 3, -1.0), (2, 2, 0.5), (1, 1, 1.5)]));
        let ix = Arc::new(vec![2, 0, 2, 1]);
        let mut p = vec![random(4, 3, &mut rng), random(3, 3, &mut rng)];
        check(&mut p, |t, v| {
            let a = t.spmm(&s, v[0]);
            let b = t.gather(v[1], &ix);
            let b = t.spmm(&s, b);
            let c = t.add(a, b);
            reduce(t, c)
        });
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = Arc::new(AttnSpec {
            groups: vec![vec![0, 2, 4], vec![1, 3, 5]],
            heads: 2,
            buckets: Some(vec![0, 1, 2, 1, 0, 1, 2, 1, 0]),
        });
        let mut p = vec![
            random(6, 4, &mut rng),
            random(6, 4, &mut rng),
            random(6, 4, &mut rng),
            random(2, 3, &mut rng),
        ];
        check(&mut p, |t, v| {
            let o = t.attention(v[0], v[1], v[2], Some(v[3]), &spec);
            reduce(t, o)
        });
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = Arc::new(AttnSpec {
            groups: vec![vec![0, 1, 2, 3]],
            heads: 2,
            buckets: None,
        });
        let mut t = Tape::new();
        let q = t.input(random(4, 6, &mut rng));
        let k = t.input(random(4, 6, &mut rng));
        let v = t.input(random(4, 6, &mut rng));
        let o = t.attention(q, k, v, None, &spec);
        for row in t.attention_probs(o).unwrap().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let a = t.input(random(3, 3, &mut rng));
        assert_eq!(t.dropout(a, 0.0, &mut rng), a);
        let d = t.dropout(a, 0.5, &mut rng);
        let zeros = t.value(d).data.iter().filter(|&&x| x == 0.0).count();
        assert!(zeros > 0 && zeros < 9);
    }
}
