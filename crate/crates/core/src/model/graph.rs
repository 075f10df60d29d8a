//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value, and [`Graph::backward`] walks the tape in reverse. Parameter leaves
//! borrow from a [`ParamStore`] so forward passes never copy weights.

use std::rc::Rc;

use super::params::ParamStore;
use super::tensor::Mat;

pub type NodeId = usize;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Value {
    Owned(Mat),
    Param(usize),
}

enum Op {
    Const,
    Param,
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Gather { table: NodeId, ids: Vec<usize> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Mat, inv_std: Vec<f64> },
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    Softmax { x: NodeId },
    Dropout { x: NodeId, mask: Vec<f64> },
    WeightedRowSum { x: NodeId, weights: Vec<f64> },
    CrossEntropy { logits: NodeId, targets: Vec<Option<usize>>, smoothing: f64, probs: Mat },
    SquaredError { pred: NodeId, target: Mat },
    Sum(Vec<NodeId>),
}

struct Node {
    value: Value,
    op: Op,
}

/// Per-parameter gradients, `None` where the loss does not depend on a tensor.
pub type ParamGrads = Vec<Option<Mat>>;

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Row-wise attention mask: `allowed(i, j)` decides whether query `i` may see key `j`.
#[derive(Clone)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allowed: Rc<Vec<bool>>,
}

impl AttnMask {
    pub fn new(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        AttnMask { rows, cols, allowed: Rc::new(allowed) }
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        match &self.nodes[id].value {
            Value::Owned(m) => m,
            Value::Param(i) => self.params.get(*i),
        }
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.data()[0]
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value: Value::Owned(value), op });
        self.nodes.len() - 1
    }

    /// Leaf for parameter `idx`; repeated calls return the same node.
    pub fn param(&mut self, idx: usize) -> NodeId {
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        self.nodes.push(Node { value: Value::Param(idx), op: Op::Param });
        let id = self.nodes.len() - 1;
        self.param_nodes[idx] = Some(id);
        id
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.shape(), (1, v.cols()), "add_row shape mismatch");
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for x in v.data_mut() {
            let u = GELU_C * (*x + GELU_A * *x * *x * *x);
            *x = 0.5 * *x * (1.0 + u.tanh());
        }
        self.push(v, Op::Gelu(a))
    }

    /// Selects rows of `table`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Mat::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(v, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let (mean, var) = mean_var(xv.row(r));
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (h, v) in xhat.row_mut(r).iter_mut().zip(xv.row(r)) {
                *h = (v - mean) * is;
            }
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gv + bv;
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> NodeId {
        let xv = self.value(x);
        let mut v = Mat::zeros(xv.rows(), width);
        for r in 0..xv.rows() {
            v.row_mut(r).copy_from_slice(&xv.row(r)[start..start + width]);
        }
        self.push(v, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            for r in 0..rows {
                v.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row softmax. Disallowed entries get probability exactly zero; a row with
    /// no allowed entry is all zeros.
    pub fn softmax(&mut self, x: NodeId, mask: Option<&AttnMask>) -> NodeId {
        let v = softmax_rows(self.value(x), mask);
        self.push(v, Op::Softmax { x })
    }

    /// Multiplies by a fixed mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        let mut v = self.value(x).clone();
        for (a, m) in v.data_mut().iter_mut().zip(&mask) {
            *a *= m;
        }
        self.push(v, Op::Dropout { x, mask })
    }

    /// `Σ_i weights[i] · x[i, :]` as a `1 × cols` row.
    pub fn weighted_row_sum(&mut self, x: NodeId, weights: Vec<f64>) -> NodeId {
        let xv = self.value(x);
        let mut v = Mat::zeros(1, xv.cols());
        for (r, w) in weights.iter().enumerate() {
            for (o, a) in v.data_mut().iter_mut().zip(xv.row(r)) {
                *o += w * a;
            }
        }
        self.push(v, Op::WeightedRowSum { x, weights })
    }

    /// Summed token cross-entropy over rows with a target. With smoothing `ε`
    /// the target distribution is `(1-ε)·onehot + ε/V`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>], smoothing: f64) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target slot per logits row");
        let probs = softmax_rows(lv, None);
        let vocab = lv.cols() as f64;
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = lv.row(r);
            let lse = log_sum_exp(row);
            let nll = lse - row[t];
            if smoothing > 0.0 {
                let mean_logit = row.iter().sum::<f64>() / vocab;
                let uniform_nll = lse - mean_logit;
                loss += (1.0 - smoothing) * nll + smoothing * uniform_nll;
            } else {
                loss += nll;
            }
        }
        self.push(
            Mat::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy { logits, targets: targets.to_vec(), smoothing, probs },
        )
    }

    /// `½ Σ (pred - target)²`
    pub fn squared_error(&mut self, pred: NodeId, target: Mat) -> NodeId {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape());
        let loss: f64 = pv.data().iter().zip(target.data()).map(|(p, t)| 0.5 * (p - t) * (p - t)).sum();
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::SquaredError { pred, target })
    }

    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        let mut v = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            v.add_assign(self.value(p));
        }
        self.push(v, Op::Sum(parts.to_vec()))
    }

    /// Gradients of the scalar node `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: NodeId) -> ParamGrads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..=loss).map(|_| None).collect();
        grads[loss] = Some(Mat::filled(1, 1, 1.0));
        let mut out: ParamGrads = vec![None; self.params.len()];

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Const => {}
                Op::Param => {
                    if let Value::Param(pi) = self.nodes[id].value {
                        accumulate(&mut out[pi], g);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b));
                    let db = self.value(*a).matmul_at(&g);
                    accumulate(&mut grads[*a], da);
                    accumulate(&mut grads[*b], db);
                }
                Op::MatMulBt(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_at(self.value(*a));
                    accumulate(&mut grads[*a], da);
                    accumulate(&mut grads[*b], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*b], g.clone());
                    accumulate(&mut grads[*a], g);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads[*row], g.col_sums());
                    accumulate(&mut grads[*a], g);
                }
                Op::Scale(a, s) => accumulate(&mut grads[*a], g.scaled(*s)),
                Op::Gelu(a) => {
                    let xv = self.value(*a);
                    let mut d = g;
                    for (dv, &x) in d.data_mut().iter_mut().zip(xv.data()) {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *dv *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    }
                    accumulate(&mut grads[*a], d);
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let mut d = Mat::zeros(tv.rows(), tv.cols());
                    for (r, &tid) in ids.iter().enumerate() {
                        for (o, v) in d.row_mut(tid).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[*table], d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gv = self.value(*gamma);
                    let (rows, cols) = xhat.shape();
                    let n = cols as f64;
                    let mut dgamma = Mat::zeros(1, cols);
                    let dbeta = g.col_sums();
                    let mut dx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        for ((dgm, gi), hi) in dgamma.data_mut().iter_mut().zip(gr).zip(hr) {
                            *dgm += gi * hi;
                        }
                        let dxhat: Vec<f64> = gr.iter().zip(gv.data()).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dh: f64 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let is = inv_std[r];
                        for ((o, d), h) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(hr) {
                            *o = is / n * (n * d - sum_d - h * sum_dh);
                        }
                    }
                    accumulate(&mut grads[*x], dx);
                    accumulate(&mut grads[*gamma], dgamma);
                    accumulate(&mut grads[*beta], dbeta);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[*x], d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut d = Mat::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        accumulate(&mut grads[p], d);
                    }
                }
                Op::Softmax { x } => {
                    let p = self.value(id);
                    let mut d = Mat::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, pv), gv) in d.row_mut(r).iter_mut().zip(pr).zip(gr) {
                            *o = pv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads[*x], d);
                }
                Op::Dropout { x, mask } => {
                    let mut d = g;
                    for (a, m) in d.data_mut().iter_mut().zip(mask) {
                        *a *= m;
                    }
                    accumulate(&mut grads[*x], d);
                }
                Op::WeightedRowSum { x, weights } => {
                    let xv = self.value(*x);
                    let mut d = Mat::zeros(xv.rows(), xv.cols());
                    for (r, w) in weights.iter().enumerate() {
                        for (o, gv) in d.row_mut(r).iter_mut().zip(g.data()) {
                            *o = w * gv;
                        }
                    }
                    accumulate(&mut grads[*x], d);
                }
                Op::CrossEntropy { logits, targets, smoothing, probs } => {
                    let upstream = g.data()[0];
                    let vocab = probs.cols() as f64;
                    let mut d = Mat::zeros(probs.rows(), probs.cols());
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let row = d.row_mut(r);
                        row.copy_from_slice(probs.row(r));
                        if *smoothing > 0.0 {
                            for v in row.iter_mut() {
                                *v -= smoothing / vocab;
                            }
                            row[t] -= 1.0 - smoothing;
                        } else {
                            row[t] -= 1.0;
                        }
                        for v in row.iter_mut() {
                            *v *= upstream;
                        }
                    }
                    accumulate(&mut grads[*logits], d);
                }
                Op::SquaredError { pred, target } => {
                    let upstream = g.data()[0];
                    let pv = self.value(*pred);
                    let data = pv.data().iter().zip(target.data()).map(|(p, t)| upstream * (p - t)).collect();
                    accumulate(&mut grads[*pred], Mat::from_vec(pv.rows(), pv.cols(), data));
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        accumulate(&mut grads[p], g.clone());
                    }
                }
            }
        }
        out
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Masked row softmax (the forward kernel of [`Graph::softmax`]).
pub fn softmax_rows(x: &Mat, mask: Option<&AttnMask>) -> Mat {
    let (rows, cols) = x.shape();
    if let Some(m) = mask {
        assert_eq!((m.rows, m.cols), (rows, cols), "mask shape mismatch");
    }
    let mut out = Mat::zeros(rows, cols);
    for r in 0..rows {
        let xr = x.row(r);
        let ok = |j: usize| mask.is_none_or(|m| m.allowed(r, j));
        let max = (0..cols).filter(|&j| ok(j)).map(|j| xr[j]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let orow = out.row_mut(r);
        let mut total = 0.0;
        for j in 0..cols {
            if ok(j) {
                let e = (xr[j] - max).exp();
                orow[j] = e;
                total += e;
            }
        }
        for v in orow.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<Mat>) -> ParamStore {
        let mut s = ParamStore::new();
        for (i, v) in values.into_iter().enumerate() {
            s.push(format!("p{i}"), v);
        }
        s
    }

    #[test]
    fn masked_softmax_rows_sum_to_one() {
        let x = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 50.0]]);
        let mask = AttnMask::new(2, 3, |i, j| j <= i + 1);
        let p = softmax_rows(&x, Some(&mask));
        for r in 0..2 {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.get(0, 2), 0.0);
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let x = Mat::from_rows(&[vec![1.0, 2.0]]);
        let mask = AttnMask::new(1, 2, |_, _| false);
        assert_eq!(softmax_rows(&x, Some(&mask)).data(), &[0.0, 0.0]);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_log_vocab() {
        let s = store(vec![Mat::zeros(3, 7)]);
        for eps in [0.0, 0.1] {
            let mut g = Graph::new(&s);
            let l = g.param(0);
            let ce = g.cross_entropy(l, &[Some(1), None, Some(6)], eps);
            assert!((g.scalar(ce) / 2.0 - 7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_logits_have_near_zero_loss() {
        let mut logits = Mat::zeros(2, 5);
        logits.set(0, 3, 40.0);
        logits.set(1, 0, 40.0);
        let s = store(vec![logits]);
        let mut g = Graph::new(&s);
        let l = g.param(0);
        let ce = g.cross_entropy(l, &[Some(3), Some(0)], 0.0);
        assert!(g.scalar(ce) / 2.0 <= 1e-3);
    }

    #[test]
    fn layer_norm_normalizes_before_affine() {
        let s = store(vec![
            Mat::from_rows(&[vec![1.0, 5.0, -2.0, 8.0], vec![0.1, 0.2, 0.3, 0.4]]),
            Mat::filled(1, 4, 1.0),
            Mat::zeros(1, 4),
        ]);
        let mut g = Graph::new(&s);
        let (x, ga, be) = (g.param(0), g.param(1), g.param(2));
        let y = g.layer_norm(x, ga, be);
        for r in 0..2 {
            let (m, v) = mean_var(g.value(y).row(r));
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn shared_leaf_accumulates_gradient() {
        // loss = ½‖A + A - t‖² with t = 0 ⇒ dA = 2·(2A) = 4A
        let a = Mat::from_rows(&[vec![1.0, -2.0]]);
        let s = store(vec![a.clone()]);
        let mut g = Graph::new(&s);
        let p = g.param(0);
        let p2 = g.param(0);
        assert_eq!(p, p2);
        let sum = g.add(p, p2);
        let loss = g.squared_error(sum, Mat::zeros(1, 2));
        let grads = g.backward(loss);
        assert_eq!(grads[0].as_ref().unwrap().data(), &[4.0, -8.0]);
    }
}
