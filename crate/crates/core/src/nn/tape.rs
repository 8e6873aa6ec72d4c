//! Reverse-mode automatic differentiation on a flat tape of `Array2<f64>`
//! nodes.
//!
//! Every operation appends one node holding its value and the indices of
//! its inputs; [`Tape::backward`] walks the tape once in reverse, so
//! construction order is the topological order. Parameters enter as leaves
//! each forward pass and their gradients are read back by index.
//!
//! The op set is exactly what the policy networks need, including a few
//! fused graph primitives (segment softmax/sum for attention, a masked
//! log-softmax over the per-element action segments) whose hand-written
//! backward passes keep the tape short and the numerics exact.

use ndarray::{Array2, Axis};

pub type Var = usize;

/// Finite stand-in for log(0) emitted for masked logits: large enough that
/// `exp` underflows to exactly 0.0, small enough to stay finite through
/// any downstream arithmetic.
pub const MASKED_LOGP: f64 = -1e9;

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[m, d] * [m, 1]`, the column broadcast over d.
    MulCol(Var, Var),
    /// `[m, d] + [1, d]`, the bias row broadcast over m.
    AddRow(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    /// `[m, d] -> [1, 1]`.
    SumAll(Var),
    /// `[m, d] -> [1, 1]`, dividing by the element count.
    MeanAll(Var),
    /// `[m, d] -> [m, 1]`, summing each row.
    SumCols(Var),
    /// Row gather: `out[k] = src[idx[k]]`.
    GatherRows(Var, Vec<usize>),
    /// `[m, d] ++ [n, d] -> [m + n, d]`.
    ConcatRows(Var, Var),
    /// Sum rows of `[e, d]` into `n` buckets by id.
    SegmentSum(Var, Vec<usize>, usize),
    /// Mean rows of `[e, d]` into `n` buckets by id; empty buckets are 0.
    SegmentMean(Var, Vec<usize>, usize),
    /// Softmax of an `[e, 1]` score column within each bucket.
    SegmentSoftmax(Var, Vec<usize>, usize),
    Clamp(Var, f64, f64),
    /// Elementwise minimum of two same-shape nodes.
    MinPair(Var, Var),
    /// Per-row, per-segment masked log-softmax; see [`Tape::masked_log_softmax`].
    MaskedLogSoftmax(Var, Vec<(usize, usize)>, Vec<bool>),
    /// Per-row sum of `k` chosen entries: `out[b] = sum_j src[b, idx[b*k + j]]`.
    GatherSumRows(Var, Vec<usize>, usize),
}

struct Node {
    value: Array2<f64>,
    grad: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v].value
    }

    pub fn grad(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v].grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let grad = Array2::zeros(value.dim());
        self.nodes.push(Node { value, grad, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a].value - &self.nodes[b].value;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a].value * &self.nodes[b].value;
        self.push(value, Op::Mul(a, b))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let value = &self.nodes[a].value * &self.nodes[col].value;
        self.push(value, Op::MulCol(a, col))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = &self.nodes[a].value + &self.nodes[row].value;
        self.push(value, Op::AddRow(a, row))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = -&self.nodes[a].value;
        self.push(value, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = &self.nodes[a].value * s;
        self.push(value, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a].value.mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.nodes[a].value.mapv(f64::ln);
        self.push(value, Op::Ln(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a].value.len() as f64;
        let value = Array2::from_elem((1, 1), self.nodes[a].value.sum() / n);
        self.push(value, Op::MeanAll(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let sums = self.nodes[a].value.sum_axis(Axis(1));
        let m = sums.len();
        let value = sums.into_shape_with_order((m, 1)).unwrap();
        self.push(value, Op::SumCols(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = &self.nodes[a].value;
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            value.row_mut(k).assign(&src.row(i));
        }
        self.push(value, Op::GatherRows(a, idx))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        debug_assert_eq!(va.ncols(), vb.ncols());
        let mut value = Array2::zeros((va.nrows() + vb.nrows(), va.ncols()));
        value.slice_mut(ndarray::s![..va.nrows(), ..]).assign(va);
        value.slice_mut(ndarray::s![va.nrows().., ..]).assign(vb);
        self.push(value, Op::ConcatRows(a, b))
    }

    pub fn segment_sum(&mut self, a: Var, ids: Vec<usize>, n: usize) -> Var {
        let src = &self.nodes[a].value;
        debug_assert_eq!(src.nrows(), ids.len());
        let mut value = Array2::zeros((n, src.ncols()));
        for (r, &s) in ids.iter().enumerate() {
            let row = src.row(r);
            let mut dst = value.row_mut(s);
            dst += &row;
        }
        self.push(value, Op::SegmentSum(a, ids, n))
    }

    pub fn segment_mean(&mut self, a: Var, ids: Vec<usize>, n: usize) -> Var {
        let src = &self.nodes[a].value;
        let mut value = Array2::zeros((n, src.ncols()));
        let mut counts = vec![0usize; n];
        for (r, &s) in ids.iter().enumerate() {
            let row = src.row(r);
            let mut dst = value.row_mut(s);
            dst += &row;
            counts[s] += 1;
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                let mut row = value.row_mut(s);
                row /= c as f64;
            }
        }
        self.push(value, Op::SegmentMean(a, ids, n))
    }

    pub fn segment_softmax(&mut self, a: Var, ids: Vec<usize>, n: usize) -> Var {
        let src = &self.nodes[a].value;
        debug_assert_eq!(src.ncols(), 1);
        let mut maxes = vec![f64::NEG_INFINITY; n];
        for (r, &s) in ids.iter().enumerate() {
            maxes[s] = maxes[s].max(src[(r, 0)]);
        }
        let mut sums = vec![0.0; n];
        let mut value = Array2::zeros((src.nrows(), 1));
        for (r, &s) in ids.iter().enumerate() {
            let e = (src[(r, 0)] - maxes[s]).exp();
            value[(r, 0)] = e;
            sums[s] += e;
        }
        for (r, &s) in ids.iter().enumerate() {
            value[(r, 0)] /= sums[s];
        }
        self.push(value, Op::SegmentSoftmax(a, ids, n))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.nodes[a].value.mapv(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn min_pair(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let mut value = va.clone();
        value.zip_mut_with(vb, |x, &y| *x = x.min(y));
        self.push(value, Op::MinPair(a, b))
    }

    /// Per-row masked log-softmax inside each `(offset, len)` segment of
    /// the columns. Masked entries output [`MASKED_LOGP`] and receive zero
    /// gradient; unmasked entries get an exact, max-shifted log-softmax
    /// over their segment's unmasked set. `mask` is row-major `[rows *
    /// cols]` with `true` = allowed.
    pub fn masked_log_softmax(
        &mut self,
        a: Var,
        segments: Vec<(usize, usize)>,
        mask: Vec<bool>,
    ) -> Var {
        let src = &self.nodes[a].value;
        let (rows, cols) = src.dim();
        debug_assert_eq!(mask.len(), rows * cols);
        let mut value = Array2::from_elem((rows, cols), MASKED_LOGP);
        for b in 0..rows {
            for &(off, len) in &segments {
                let mut m = f64::NEG_INFINITY;
                for c in off..off + len {
                    if mask[b * cols + c] {
                        m = m.max(src[(b, c)]);
                    }
                }
                if m == f64::NEG_INFINITY {
                    continue; // fully masked segment: all entries stay at the sentinel
                }
                let mut z = 0.0;
                for c in off..off + len {
                    if mask[b * cols + c] {
                        z += (src[(b, c)] - m).exp();
                    }
                }
                let log_z = z.ln();
                for c in off..off + len {
                    if mask[b * cols + c] {
                        value[(b, c)] = src[(b, c)] - m - log_z;
                    }
                }
            }
        }
        self.push(value, Op::MaskedLogSoftmax(a, segments, mask))
    }

    /// `out[b, 0] = sum_j src[b, idx[b * k + j]]` for `j < k`: collects the
    /// chosen per-element log-probabilities of each sample into one scalar.
    pub fn gather_sum_rows(&mut self, a: Var, idx: Vec<usize>, k: usize) -> Var {
        let src = &self.nodes[a].value;
        let rows = src.nrows();
        debug_assert_eq!(idx.len(), rows * k);
        let mut value = Array2::zeros((rows, 1));
        for b in 0..rows {
            let mut s = 0.0;
            for j in 0..k {
                s += src[(b, idx[b * k + j])];
            }
            value[(b, 0)] = s;
        }
        self.push(value, Op::GatherSumRows(a, idx, k))
    }

    /// Backpropagates from `root`, which must be a `[1, 1]` scalar. All
    /// gradients are zeroed first; read them afterwards with [`Tape::grad`].
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.nodes[root].value.dim(), (1, 1), "backward needs a scalar root");
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.nodes[root].grad[(0, 0)] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let op = self.nodes[i].op.clone();
            let grad = self.nodes[i].grad.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = grad.dot(&self.nodes[b].value.t());
                    let db = self.nodes[a].value.t().dot(&grad);
                    self.nodes[a].grad += &da;
                    self.nodes[b].grad += &db;
                }
                Op::Add(a, b) => {
                    self.nodes[a].grad += &grad;
                    self.nodes[b].grad += &grad;
                }
                Op::Sub(a, b) => {
                    self.nodes[a].grad += &grad;
                    self.nodes[b].grad -= &grad;
                }
                Op::Mul(a, b) => {
                    let da = &grad * &self.nodes[b].value;
                    let db = &grad * &self.nodes[a].value;
                    self.nodes[a].grad += &da;
                    self.nodes[b].grad += &db;
                }
                Op::MulCol(a, col) => {
                    let da = &grad * &self.nodes[col].value;
                    let dcol = (&grad * &self.nodes[a].value)
                        .sum_axis(Axis(1))
                        .into_shape_with_order((grad.nrows(), 1))
                        .unwrap();
                    self.nodes[a].grad += &da;
                    self.nodes[col].grad += &dcol;
                }
                Op::AddRow(a, row) => {
                    let drow = grad
                        .sum_axis(Axis(0))
                        .into_shape_with_order((1, grad.ncols()))
                        .unwrap();
                    self.nodes[a].grad += &grad;
                    self.nodes[row].grad += &drow;
                }
                Op::Neg(a) => {
                    self.nodes[a].grad -= &grad;
                }
                Op::Scale(a, s) => {
                    let da = &grad * s;
                    self.nodes[a].grad += &da;
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let da = &grad * &y.mapv(|t| 1.0 - t * t);
                    self.nodes[a].grad += &da;
                }
                Op::Relu(a) => {
                    let da = &grad * &self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    self.nodes[a].grad += &da;
                }
                Op::Exp(a) => {
                    let da = &grad * &self.nodes[i].value;
                    self.nodes[a].grad += &da;
                }
                Op::Ln(a) => {
                    let da = &grad / &self.nodes[a].value;
                    self.nodes[a].grad += &da;
                }
                Op::SumAll(a) => {
                    let g = grad[(0, 0)];
                    self.nodes[a].grad += g;
                }
                Op::MeanAll(a) => {
                    let g = grad[(0, 0)] / self.nodes[a].value.len() as f64;
                    self.nodes[a].grad += g;
                }
                Op::SumCols(a) => {
                    let cols = self.nodes[a].value.ncols();
                    for r in 0..grad.nrows() {
                        let g = grad[(r, 0)];
                        for c in 0..cols {
                            self.nodes[a].grad[(r, c)] += g;
                        }
                    }
                }
                Op::GatherRows(a, idx) => {
                    for (k, &r) in idx.iter().enumerate() {
                        let g = grad.row(k);
                        let mut dst = self.nodes[a].grad.row_mut(r);
                        dst += &g;
                    }
                }
                Op::ConcatRows(a, b) => {
                    let m = self.nodes[a].value.nrows();
                    let ga = grad.slice(ndarray::s![..m, ..]);
                    let gb = grad.slice(ndarray::s![m.., ..]);
                    self.nodes[a].grad += &ga;
                    self.nodes[b].grad += &gb;
                }
                Op::SegmentSum(a, ids, _n) => {
                    for (r, &s) in ids.iter().enumerate() {
                        let g = grad.row(s);
                        let mut dst = self.nodes[a].grad.row_mut(r);
                        dst += &g;
                    }
                }
                Op::SegmentMean(a, ids, n) => {
                    let mut counts = vec![0usize; n];
                    for &s in &ids {
                        counts[s] += 1;
                    }
                    for (r, &s) in ids.iter().enumerate() {
                        let scale = 1.0 / counts[s] as f64;
                        let g = grad.row(s);
                        let mut dst = self.nodes[a].grad.row_mut(r);
                        ndarray::Zip::from(&mut dst).and(&g).for_each(|d, &gv| {
                            *d += gv * scale;
                        });
                    }
                }
                Op::SegmentSoftmax(a, ids, n) => {
                    // dx_e = alpha_e * (g_e - sum_{e' in seg} g_e' alpha_e')
                    let alpha = self.nodes[i].value.clone();
                    let mut seg_dot = vec![0.0; n];
                    for (r, &s) in ids.iter().enumerate() {
                        seg_dot[s] += grad[(r, 0)] * alpha[(r, 0)];
                    }
                    for (r, &s) in ids.iter().enumerate() {
                        let da = alpha[(r, 0)] * (grad[(r, 0)] - seg_dot[s]);
                        self.nodes[a].grad[(r, 0)] += da;
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &self.nodes[a].value;
                    let mut da = grad.clone();
                    ndarray::Zip::from(&mut da).and(x).for_each(|g, &xv| {
                        if xv < lo || xv > hi {
                            *g = 0.0;
                        }
                    });
                    self.nodes[a].grad += &da;
                }
                Op::MinPair(a, b) => {
                    let (va, vb) = (self.nodes[a].value.clone(), self.nodes[b].value.clone());
                    let mut da = grad.clone();
                    let mut db = grad.clone();
                    ndarray::Zip::from(&mut da).and(&va).and(&vb).for_each(|g, &x, &y| {
                        if x > y {
                            *g = 0.0;
                        }
                    });
                    ndarray::Zip::from(&mut db).and(&va).and(&vb).for_each(|g, &x, &y| {
                        if x <= y {
                            *g = 0.0;
                        }
                    });
                    self.nodes[a].grad += &da;
                    self.nodes[b].grad += &db;
                }
                Op::MaskedLogSoftmax(a, segments, mask) => {
                    let logp = &self.nodes[i].value;
                    let (rows, cols) = logp.dim();
                    let mut da = Array2::zeros((rows, cols));
                    for b in 0..rows {
                        for &(off, len) in &segments {
                            let mut gsum = 0.0;
                            for c in off..off + len {
                                if mask[b * cols + c] {
                                    gsum += grad[(b, c)];
                                }
                            }
                            for c in off..off + len {
                                if mask[b * cols + c] {
                                    let p = logp[(b, c)].exp();
                                    da[(b, c)] = grad[(b, c)] - p * gsum;
                                }
                            }
                        }
                    }
                    self.nodes[a].grad += &da;
                }
                Op::GatherSumRows(a, idx, k) => {
                    for b in 0..grad.nrows() {
                        let g = grad[(b, 0)];
                        for j in 0..k {
                            self.nodes[a].grad[(b, idx[b * k + j])] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Central finite differences on every entry of every leaf, against the
/// tape gradient. `build` must construct the same graph from the same
/// leaves each call and return the scalar root. Panics on the first
/// entry whose relative error reaches 1e-4.
pub fn check_grads(leaves: &[Array2<f64>], build: impl Fn(&mut Tape, &[Var]) -> Var) {
    check_grads_with_step(leaves, 1e-6, build);
}

/// [`check_grads`] with an explicit step size, for graphs whose outputs
/// are too nonlinear for the default.
pub fn check_grads_with_step(
    leaves: &[Array2<f64>],
    h: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let root = build(&mut tape, &vars);
    tape.backward(root);
    for (li, leaf) in leaves.iter().enumerate() {
        for r in 0..leaf.nrows() {
            for c in 0..leaf.ncols() {
                let eval = |delta: f64| -> f64 {
                    let mut tape = Tape::new();
                    let vars: Vec<Var> = leaves
                        .iter()
                        .enumerate()
                        .map(|(i, l)| {
                            let mut l = l.clone();
                            if i == li {
                                l[(r, c)] += delta;
                            }
                            tape.leaf(l)
                        })
                        .collect();
                    let root = build(&mut tape, &vars);
                    tape.value(root)[(0, 0)]
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let ad = tape.grad(vars[li])[(r, c)];
                let denom = fd.abs().max(ad.abs()).max(1e-8);
                assert!(
                    (fd - ad).abs() / denom < 1e-4,
                    "leaf {li} entry ({r}, {c}): fd {fd} vs ad {ad}"
                );
            }
        }
    }
}
