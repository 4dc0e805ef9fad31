//! Reverse-mode differentiation over a fixed set of layer primitives.
//!
//! Ops never panic on bad shapes: the first failure is kept as a sticky
//! fault and surfaced by [`Tape::status`] or [`Tape::backward`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParameterStore, SlotKind};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Weighted edges `(dst, src, w)`: `y[dst] += w * x[src]` inside each block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockEdges {
    pub block: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

/// How batchnorm channels are laid out in a 2-D input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnLayout {
    /// One channel per column (standard 1-D batchnorm).
    PerColumn,
    /// Rows come in blocks of `k` node positions; channel = row % k,
    /// statistics over the batch and all features of that node.
    PerNode(usize),
}

impl BnLayout {
    fn channels(self, cols: usize) -> usize {
        match self {
            BnLayout::PerColumn => cols,
            BnLayout::PerNode(k) => k,
        }
    }

    fn channel(self, r: usize, c: usize) -> usize {
        match self {
            BnLayout::PerColumn => c,
            BnLayout::PerNode(k) => r % k,
        }
    }
}

/// Batch statistics produced by a train-mode batchnorm, to be folded into
/// the running buffers by the caller.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub key: String,
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Dropout(Var, Vec<f64>),
    BatchNorm { x: Var, gamma: Var, beta: Var, layout: BnLayout, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterAdd { base: Var, src: Var, rows: Vec<usize>, col: usize },
    Reshape(Var),
    ScaleRows(Var, Var),
    Aggregate(Var, Arc<BlockEdges>),
    SumBlocks(Var, usize),
    SumAll(Var),
    CrossEntropy { p: Var, labels: Vec<usize>, weights: Vec<f64> },
    SoftmaxCrossEntropy { logits: Var, probs: Tensor2, labels: Vec<usize>, weights: Vec<f64> },
}

struct Node {
    value: Tensor2,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
    scope: String,
    fault: Option<Error>,
    bn_updates: Vec<BnUpdate>,
}

impl Tape {
    /// `seed` drives dropout masks only.
    pub fn new(train: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scope: "input".into(),
            fault: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn set_scope(&mut self, scope: &str) {
        self.scope.clear();
        self.scope.push_str(scope);
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn status(&self) -> Result<()> {
        match &self.fault {
            None => Ok(()),
            Some(Error::Shape { op, detail }) => Err(Error::Shape { op, detail: detail.clone() }),
            Some(Error::NonFinite { scope }) => Err(Error::NonFinite { scope: scope.clone() }),
            Some(e) => Err(Error::Runtime(e.to_string())),
        }
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(Error::NonFinite { scope: self.scope.clone() });
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape_fault(&mut self, op: &'static str, detail: String) -> Var {
        if self.fault.is_none() {
            self.fault = Some(Error::Shape { op, detail: format!("{} ({})", detail, self.scope) });
        }
        self.nodes.push(Node { value: Tensor2::zeros(1, 1), op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor2) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a parameter slot as a leaf; gradients flow back into the
    /// store on [`Tape::backward`].
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Var {
        match store.slot_index(name) {
            Some(i) => self.push(store.slot(i).value.clone(), Op::Param(i)),
            None => self.shape_fault("param", format!("unknown slot {name}")),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return self.shape_fault("matmul", format!("{sa:?} x {sb:?}"));
        }
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds a 1×c bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.0 != 1 || sb.1 != sx.1 {
            return self.shape_fault("add_bias", format!("{sx:?} + {sb:?}"));
        }
        let mut v = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for r in 0..sx.0 {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&bias) {
                *o += bb;
            }
        }
        self.push(v, Op::AddBias(x, b))
    }

    /// `x · w + b` with `w` stored as (in, out).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add_bias(y, b),
            None => y,
        }
    }

    fn zip_op(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Option<Tensor2> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            self.shape_fault(name, format!("{sa:?} vs {sb:?}"));
            return None;
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        Some(Tensor2::from_vec(sa.0, sa.1, data).expect("same shape"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        match self.zip_op(a, b, "add", |x, y| x + y) {
            Some(v) => self.push(v, Op::Add(a, b)),
            None => Var(self.nodes.len() - 1),
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        match self.zip_op(a, b, "sub", |x, y| x - y) {
            Some(v) => self.push(v, Op::Sub(a, b)),
            None => Var(self.nodes.len() - 1),
        }
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        match self.zip_op(a, b, "mul", |x, y| x * y) {
            Some(v) => self.push(v, Op::Mul(a, b)),
            None => Var(self.nodes.len() - 1),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::Softmax(x))
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let n = self.value(x).len();
        let mask: Vec<f64> =
            (0..n).map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mut v = self.value(x).clone();
        for (o, m) in v.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(v, Op::Dropout(x, mask))
    }

    /// Batchnorm with per-channel affine `gamma`/`beta` (1×C). Train mode
    /// normalises with biased batch statistics and queues a running-stat
    /// update under `key`; eval mode uses `running`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        layout: BnLayout,
        running: (&[f64], &[f64]),
        key: &str,
    ) -> Var {
        let (rows, cols) = self.shape(x);
        let ch = layout.channels(cols);
        if self.shape(gamma) != (1, ch) || self.shape(beta) != (1, ch) || running.0.len() != ch {
            return self.shape_fault("batchnorm", format!("input {rows}x{cols}, {ch} channels"));
        }
        if let BnLayout::PerNode(k) = layout {
            if k == 0 || rows % k != 0 {
                return self.shape_fault("batchnorm", format!("{rows} rows not a multiple of {k}"));
            }
        }
        let xv = self.value(x);
        let (mean, var) = if self.train {
            let mut sum = vec![0.0; ch];
            let mut cnt = vec![0usize; ch];
            for r in 0..rows {
                for c in 0..cols {
                    let k = layout.channel(r, c);
                    sum[k] += xv.get(r, c);
                    cnt[k] += 1;
                }
            }
            let mean: Vec<f64> = sum.iter().zip(&cnt).map(|(s, n)| s / *n as f64).collect();
            let mut sq = vec![0.0; ch];
            for r in 0..rows {
                for c in 0..cols {
                    let k = layout.channel(r, c);
                    let d = xv.get(r, c) - mean[k];
                    sq[k] += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().zip(&cnt).map(|(s, n)| s / *n as f64).collect();
            let unbiased = sq
                .iter()
                .zip(&cnt)
                .map(|(s, n)| if *n > 1 { s / (*n - 1) as f64 } else { 0.0 })
                .collect();
            self.bn_updates.push(BnUpdate { key: key.to_string(), mean: mean.clone(), var_unbiased: unbiased });
            (mean, var)
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let xv = self.value(x);
        let mut xhat = vec![0.0; rows * cols];
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let k = layout.channel(r, c);
                let h = (xv.get(r, c) - mean[k]) * inv_std[k];
                xhat[r * cols + c] = h;
                out.set(r, c, g[k] * h + b[k]);
            }
        }
        let batch = self.train;
        self.push(out, Op::BatchNorm { x, gamma, beta, layout, xhat, inv_std, batch })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = parts.first().map_or(0, |p| self.shape(*p).0);
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return self.shape_fault("concat_cols", "row counts differ".into());
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let (rows, cols) = self.shape(x);
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return self.shape_fault("gather_rows", format!("index {bad} >= {rows}"));
        }
        let mut out = Tensor2::zeros(idx.len(), cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.value(x).row(i));
        }
        self.push(out, Op::GatherRows(x, idx.to_vec()))
    }

    /// `base` with `src` row i added into row `rows[i]`, columns `col..`.
    pub fn scatter_add(&mut self, base: Var, src: Var, rows: &[usize], col: usize) -> Var {
        let (br, bc) = self.shape(base);
        let (sr, sc) = self.shape(src);
        if sr != rows.len() || col + sc > bc || rows.iter().any(|&r| r >= br) {
            return self.shape_fault("scatter_add", format!("{sr}x{sc} into {br}x{bc} at col {col}"));
        }
        let mut out = self.value(base).clone();
        for (i, &r) in rows.iter().enumerate() {
            for c in 0..sc {
                let v = out.get(r, col + c) + self.value(src).get(i, c);
                out.set(r, col + c, v);
            }
        }
        self.push(out, Op::ScatterAdd { base, src, rows: rows.to_vec(), col })
    }

    /// Row-major reinterpretation.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let n = self.value(x).len();
        if n != rows * cols {
            return self.shape_fault("reshape", format!("{n} values to {rows}x{cols}"));
        }
        let v = Tensor2::from_vec(rows, cols, self.value(x).data().to_vec()).expect("checked");
        self.push(v, Op::Reshape(x))
    }

    /// Multiplies row r of `x` by `s[r, 0]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if ss != (sx.0, 1) {
            return self.shape_fault("scale_rows", format!("{sx:?} by {ss:?}"));
        }
        let mut v = self.value(x).clone();
        for r in 0..sx.0 {
            let f = self.value(s).get(r, 0);
            v.row_mut(r).iter_mut().for_each(|a| *a *= f);
        }
        self.push(v, Op::ScaleRows(x, s))
    }

    /// Applies a sparse per-block adjacency to consecutive row blocks.
    pub fn aggregate(&mut self, x: Var, adj: &Arc<BlockEdges>) -> Var {
        let (rows, cols) = self.shape(x);
        let k = adj.block;
        if k == 0 || rows % k != 0 {
            return self.shape_fault("aggregate", format!("{rows} rows in blocks of {k}"));
        }
        let xv = self.value(x);
        let mut out = Tensor2::zeros(rows, cols);
        for b in 0..rows / k {
            for &(dst, src, w) in &adj.edges {
                let s = xv.row(b * k + src).to_vec();
                for (o, v) in out.row_mut(b * k + dst).iter_mut().zip(&s) {
                    *o += w * v;
                }
            }
        }
        self.push(out, Op::Aggregate(x, Arc::clone(adj)))
    }

    /// Sums each block of `k` consecutive rows.
    pub fn sum_blocks(&mut self, x: Var, k: usize) -> Var {
        let (rows, cols) = self.shape(x);
        if k == 0 || rows % k != 0 {
            return self.shape_fault("sum_blocks", format!("{rows} rows in blocks of {k}"));
        }
        let mut out = Tensor2::zeros(rows / k, cols);
        for r in 0..rows {
            let src = self.value(x).row(r).to_vec();
            for (o, v) in out.row_mut(r / k).iter_mut().zip(&src) {
                *o += v;
            }
        }
        self.push(out, Op::SumBlocks(x, k))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor2::filled(1, 1, s), Op::SumAll(x))
    }

    /// `-(1/B) Σ_b w[y_b] log max(p[b, y_b], 1e-12)`; `weights` per class.
    pub fn cross_entropy(&mut self, p: Var, labels: &[usize], weights: Option<&[f64]>) -> Var {
        let (rows, cols) = self.shape(p);
        if labels.len() != rows || labels.iter().any(|&y| y >= cols) || rows == 0 {
            return self.shape_fault("cross_entropy", format!("{} labels for {rows}x{cols}", labels.len()));
        }
        let w = weights.map_or_else(|| vec![1.0; cols], <[f64]>::to_vec);
        let pv = self.value(p);
        let mut loss = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            loss -= w[y] * pv.get(b, y).max(PROB_FLOOR).ln();
        }
        loss /= rows as f64;
        self.push(Tensor2::filled(1, 1, loss), Op::CrossEntropy { p, labels: labels.to_vec(), weights: w })
    }

    /// `-(1/B) Σ_b w[y_b] log softmax(z_b)[y_b]`, computed from logits with
    /// a stable log-sum-exp so the gradient never vanishes under saturation.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: Option<&[f64]>) -> Var {
        let (rows, cols) = self.shape(logits);
        if labels.len() != rows || labels.iter().any(|&y| y >= cols) || rows == 0 {
            return self.shape_fault("softmax_cross_entropy", format!("{} labels for {rows}x{cols}", labels.len()));
        }
        let w = weights.map_or_else(|| vec![1.0; cols], <[f64]>::to_vec);
        let z = self.value(logits);
        let mut probs = z.clone();
        let mut loss = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let row = z.row(b);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss -= w[y] * (row[y] - lse);
            softmax_in_place(probs.row_mut(b));
        }
        loss /= rows as f64;
        let op = Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec(), weights: w };
        self.push(Tensor2::filled(1, 1, loss), op)
    }

    /// Gradients of the 1×1 node `out` with respect to every node.
    pub fn gradients(&self, out: Var) -> Result<Vec<Option<Tensor2>>> {
        self.status()?;
        if self.shape(out) != (1, 1) {
            return Err(Error::Shape { op: "backward", detail: "output is not a scalar".into() });
        }
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor2::filled(1, 1, 1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Backpropagates `out` and accumulates gradients into trainable slots.
    pub fn backward(&self, out: Var, store: &mut ParameterStore) -> Result<()> {
        let grads = self.gradients(out)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(slot), Some(g)) = (&node.op, g) {
                let s = store.slot_mut(*slot);
                if s.kind == SlotKind::Trainable {
                    s.grad.add_assign(&g);
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let node = &self.nodes[i];
        let val = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(self.value(*b));
                let gb = self.value(*a).t_matmul(g);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::AddBias(x, b) => {
                let mut gb = Tensor2::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(grads, *x, g.clone());
                acc(grads, *b, gb);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(grads, *a, zip_map(g, bv, |x, y| x * y));
                acc(grads, *b, zip_map(g, av, |x, y| x * y));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(grads, *x, zip_map(g, xv, |gy, v| if v > 0.0 { gy } else { 0.0 }));
            }
            Op::Tanh(x) => acc(grads, *x, zip_map(g, val, |gy, y| gy * (1.0 - y * y))),
            Op::Sigmoid(x) => acc(grads, *x, zip_map(g, val, |gy, y| gy * y * (1.0 - y))),
            Op::Softmax(x) => {
                let mut gx = Tensor2::zeros(val.rows(), val.cols());
                for r in 0..val.rows() {
                    let dot: f64 = g.row(r).iter().zip(val.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..val.cols() {
                        gx.set(r, c, val.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(grads, *x, gx);
            }
            Op::Dropout(x, mask) => {
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                acc(grads, *x, Tensor2::from_vec(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::BatchNorm { x, gamma, beta, layout, xhat, inv_std, batch } => {
                let (rows, cols) = (g.rows(), g.cols());
                let ch = inv_std.len();
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; ch];
                let mut sum_gx = vec![0.0; ch];
                let mut cnt = vec![0.0; ch];
                for r in 0..rows {
                    for c in 0..cols {
                        let k = layout.channel(r, c);
                        let gy = g.get(r, c);
                        sum_g[k] += gy;
                        sum_gx[k] += gy * xhat[r * cols + c];
                        cnt[k] += 1.0;
                    }
                }
                let mut gx = Tensor2::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let k = layout.channel(r, c);
                        let gy = g.get(r, c);
                        let v = if *batch {
                            gam[k] * inv_std[k] / cnt[k]
                                * (cnt[k] * gy - sum_g[k] - xhat[r * cols + c] * sum_gx[k])
                        } else {
                            gam[k] * inv_std[k] * gy
                        };
                        gx.set(r, c, v);
                    }
                }
                acc(grads, *x, gx);
                acc(grads, *gamma, Tensor2::row_vector(sum_gx));
                acc(grads, *beta, Tensor2::row_vector(sum_g));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (pr, pc) = self.shape(*p);
                    let mut gp = Tensor2::zeros(pr, pc);
                    for r in 0..pr {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                    }
                    off += pc;
                    acc(grads, *p, gp);
                }
            }
            Op::GatherRows(x, idx) => {
                let (xr, xc) = self.shape(*x);
                let mut gx = Tensor2::zeros(xr, xc);
                for (o, &src) in idx.iter().enumerate() {
                    for (a, b) in gx.row_mut(src).iter_mut().zip(g.row(o)) {
                        *a += b;
                    }
                }
                acc(grads, *x, gx);
            }
            Op::ScatterAdd { base, src, rows, col } => {
                let (sr, sc) = self.shape(*src);
                let mut gs = Tensor2::zeros(sr, sc);
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..sc {
                        gs.set(i, c, g.get(r, col + c));
                    }
                }
                acc(grads, *base, g.clone());
                acc(grads, *src, gs);
            }
            Op::Reshape(x) => {
                let (xr, xc) = self.shape(*x);
                acc(grads, *x, Tensor2::from_vec(xr, xc, g.data().to_vec()).expect("shape"));
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let mut gx = g.clone();
                let mut gs = Tensor2::zeros(sv.rows(), 1);
                for r in 0..g.rows() {
                    let f = sv.get(r, 0);
                    let dot: f64 = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                    gs.set(r, 0, dot);
                    gx.row_mut(r).iter_mut().for_each(|a| *a *= f);
                }
                acc(grads, *x, gx);
                acc(grads, *s, gs);
            }
            Op::Aggregate(x, adj) => {
                let k = adj.block;
                let mut gx = Tensor2::zeros(g.rows(), g.cols());
                for b in 0..g.rows() / k {
                    for &(dst, src, w) in &adj.edges {
                        let gd = g.row(b * k + dst).to_vec();
                        for (o, v) in gx.row_mut(b * k + src).iter_mut().zip(&gd) {
                            *o += w * v;
                        }
                    }
                }
                acc(grads, *x, gx);
            }
            Op::SumBlocks(x, k) => {
                let (xr, xc) = self.shape(*x);
                let mut gx = Tensor2::zeros(xr, xc);
                for r in 0..xr {
                    gx.row_mut(r).copy_from_slice(g.row(r / k));
                }
                acc(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let (xr, xc) = self.shape(*x);
                acc(grads, *x, Tensor2::filled(xr, xc, g.get(0, 0)));
            }
            Op::CrossEntropy { p, labels, weights } => {
                let pv = self.value(*p);
                let n = labels.len() as f64;
                let mut gp = Tensor2::zeros(pv.rows(), pv.cols());
                for (b, &y) in labels.iter().enumerate() {
                    let q = pv.get(b, y);
                    if q > PROB_FLOOR {
                        gp.set(b, y, -g.get(0, 0) * weights[y] / (n * q));
                    }
                }
                acc(grads, *p, gp);
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels, weights } => {
                let n = labels.len() as f64;
                let mut gz = Tensor2::zeros(probs.rows(), probs.cols());
                for (b, &y) in labels.iter().enumerate() {
                    let f = g.get(0, 0) * weights[y] / n;
                    for c in 0..probs.cols() {
                        let t = if c == y { 1.0 } else { 0.0 };
                        gz.set(b, c, f * (probs.get(b, c) - t));
                    }
                }
                acc(grads, *logits, gz);
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor2, b: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Folds queued batch statistics into `<key>.running_mean` / `<key>.running_var`.
pub fn apply_bn_updates(store: &mut ParameterStore, updates: &[BnUpdate]) -> Result<()> {
    for u in updates {
        let mean = store.value_mut(&format!("{}.running_mean", u.key))?;
        for (r, m) in mean.data_mut().iter_mut().zip(&u.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let var = store.value_mut(&format!("{}.running_var", u.key))?;
        for (r, v) in var.data_mut().iter_mut().zip(&u.var_unbiased) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
    Ok(())
}
