//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! Each operation appends a node holding its value and enough state to
//! propagate gradients. Discrete choices made during the forward pass
//! (activation signs, max-pool winners, hinge activity, externally built
//! neighbor graphs) are folded into a decision signature so gradient checks
//! can detect when a finite-difference step crossed a kink.

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::tensor::{gemm, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentMax { input: Var, winners: Vec<usize> },
    SoftmaxRows(Var),
    PairBias(Var, Var),
    Augment(Var, Var),
    NormRows(Var, Vec<f64>),
    NormCols(Var, Vec<f64>),
    GapLoss(Box<GapLossState>),
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct GapLossState {
    input: Var,
    row_truth: Vec<usize>,
    col_truth: Vec<usize>,
    alpha: f64,
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    signature: DecisionSignature,
}

/// Running hash of every discrete forward-pass decision.
#[derive(Default)]
struct DecisionSignature(DefaultHasher);

impl DecisionSignature {
    fn add<T: Hash>(&mut self, v: T) {
        v.hash(&mut self.0);
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
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

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Folds an externally made discrete choice (for example a k-NN graph)
    /// into the decision signature.
    pub fn record_decision<T: Hash>(&mut self, v: T) {
        self.signature.add(v);
    }

    pub fn decision_signature(&self) -> u64 {
        self.signature.0.finish()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(va.rows(), vb.cols());
        gemm(va, false, vb, false, 1.0, 0.0, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(va.rows(), vb.rows());
        gemm(va, false, vb, true, 1.0, 0.0, &mut out);
        self.push(out, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let vb = self.value(b);
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), vb.shape());
        for (o, x) in out.data_mut().iter_mut().zip(vb.data()) {
            *o -= x;
        }
        self.push(out, Op::Sub(a, b))
    }

    /// Adds the `1 × c` row vector `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let vb = self.value(bias);
        assert_eq!(vb.rows(), 1);
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), vb.cols());
        let b = vb.data().to_vec();
        for i in 0..out.rows() {
            for (o, x) in out.row_mut(i).iter_mut().zip(&b) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mut out = self.value(a).clone();
        let mut signs = DefaultHasher::new();
        for v in out.data_mut().iter_mut() {
            let neg = *v < 0.0;
            neg.hash(&mut signs);
            if neg {
                *v *= slope;
            }
        }
        self.signature.add(signs.finish());
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat row mismatch");
            let c = v.cols();
            for i in 0..rows {
                out.row_mut(i)[offset..offset + c].copy_from_slice(v.row(i));
            }
            offset += c;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.cols());
        let out = Mat::from_fn(va.rows(), len, |i, j| va.get(i, start + j));
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let va = self.value(a);
        let mut out = Mat::zeros(index.len(), va.cols());
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(va.row(i));
        }
        self.push(out, Op::GatherRows(a, index))
    }

    /// Column-wise max over consecutive groups of `group` rows. Ties go to
    /// the first row of the group that attains the max.
    pub fn segment_max(&mut self, a: Var, group: usize) -> Var {
        let va = self.value(a);
        assert!(group > 0 && va.rows() % group == 0);
        let n = va.rows() / group;
        let c = va.cols();
        let mut out = Mat::zeros(n, c);
        let mut winners = vec![0usize; n * c];
        for s in 0..n {
            for j in 0..c {
                let mut best = s * group;
                let mut best_v = va.get(best, j);
                for r in s * group + 1..(s + 1) * group {
                    let v = va.get(r, j);
                    if v > best_v {
                        best = r;
                        best_v = v;
                    }
                }
                out.set(s, j, best_v);
                winners[s * c + j] = best;
            }
        }
        self.signature.add(&winners);
        self.push(out, Op::SegmentMax { input: a, winners })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// `out[i][j] = q[i] · r[i·m + j]` for `q: n × c`, `r: (n·m) × c`.
    pub fn pair_bias(&mut self, q: Var, r: Var) -> Var {
        let (vq, vr) = (self.value(q), self.value(r));
        assert_eq!(vq.cols(), vr.cols());
        let n = vq.rows();
        assert!(n > 0 && vr.rows() % n == 0);
        let m = vr.rows() / n;
        let out = Mat::from_fn(n, m, |i, j| {
            vq.row(i).iter().zip(vr.row(i * m + j)).map(|(a, b)| a * b).sum()
        });
        self.push(out, Op::PairBias(q, r))
    }

    /// Borders `c` (`m × n`) with a slack row and column, corner included,
    /// holding the `1 × 1` value `slack`.
    pub fn augment(&mut self, c: Var, slack: Var) -> Var {
        let vc = self.value(c);
        let s = self.value(slack).scalar_value();
        let (m, n) = vc.shape();
        let out = Mat::from_fn(m + 1, n + 1, |i, j| if i < m && j < n { vc.get(i, j) } else { s });
        self.push(out, Op::Augment(c, slack))
    }

    /// Shifts each row so its log-sum-exp equals `log_mass[row]`.
    pub fn log_normalize_rows(&mut self, a: Var, log_mass: Vec<f64>) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(log_mass.len(), out.rows());
        for (i, target) in log_mass.iter().enumerate() {
            let row = out.row_mut(i);
            let lse = log_sum_exp(row.iter().copied());
            row.iter_mut().for_each(|v| *v += target - lse);
        }
        self.push(out, Op::NormRows(a, log_mass))
    }

    /// Shifts each column so its log-sum-exp equals `log_mass[col]`.
    pub fn log_normalize_cols(&mut self, a: Var, log_mass: Vec<f64>) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(log_mass.len(), out.cols());
        let rows = out.rows();
        for (j, target) in log_mass.iter().enumerate() {
            let lse = log_sum_exp((0..rows).map(|i| out.get(i, j)));
            for i in 0..rows {
                let v = out.get(i, j) + target - lse;
                out.set(i, j, v);
            }
        }
        self.push(out, Op::NormCols(a, log_mass))
    }

    /// Margin loss on an `(m+1) × (n+1)` log-assignment matrix.
    ///
    /// `row_truth[i]` is the true column of source row `i` (`n` for slack) and
    /// `col_truth[j]` the true row of target column `j` (`m` for slack).
    pub fn gap_loss(&mut self, log_assign: Var, row_truth: Vec<usize>, col_truth: Vec<usize>, alpha: f64) -> Var {
        let v = self.value(log_assign);
        let (m, n) = (v.rows() - 1, v.cols() - 1);
        assert_eq!(row_truth.len(), m);
        assert_eq!(col_truth.len(), n);
        let mut total = 0.0;
        let mut active = DefaultHasher::new();
        for (i, &t) in row_truth.iter().enumerate() {
            let anchor = v.get(i, t);
            let mut s = 1.0;
            for k in 0..=n {
                let h = -anchor + v.get(i, k) + alpha;
                (h > 0.0).hash(&mut active);
                s += h.max(0.0);
            }
            total += s.ln();
        }
        for (j, &t) in col_truth.iter().enumerate() {
            let anchor = v.get(t, j);
            let mut s = 1.0;
            for k in 0..=m {
                let h = -anchor + v.get(k, j) + alpha;
                (h > 0.0).hash(&mut active);
                s += h.max(0.0);
            }
            total += s.ln();
        }
        self.signature.add(active.finish());
        self.push(
            Mat::scalar(total),
            Op::GapLoss(Box::new(GapLossState {
                input: log_assign,
                row_truth,
                col_truth,
                alpha,
            })),
        )
    }

    /// Sum of same-shaped values.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        self.push(out, Op::Sum(parts.to_vec()))
    }

    /// Reverse pass seeded with `d output / d output = 1`. `output` must be `1 × 1`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate_gemm(grads, *a, g, false, vb, true, va.shape());
                accumulate_gemm(grads, *b, va, true, g, false, vb.shape());
            }
            Op::MatMulBt(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate_gemm(grads, *a, g, false, vb, false, va.shape());
                accumulate_gemm(grads, *b, g, true, va, false, vb.shape());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                accumulate(grads, *b, neg);
            }
            Op::AddRow(a, bias) => {
                accumulate(grads, *a, g.clone());
                let mut db = Mat::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (d, x) in db.data_mut().iter_mut().zip(g.row(i)) {
                        *d += x;
                    }
                }
                accumulate(grads, *bias, db);
            }
            Op::Scale(a, s) => {
                let mut d = g.clone();
                d.data_mut().iter_mut().for_each(|v| *v *= s);
                accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let input = self.value(*a);
                let mut d = g.clone();
                for (dv, x) in d.data_mut().iter_mut().zip(input.data()) {
                    if *x < 0.0 {
                        *dv *= slope;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let d = Mat::from_fn(g.rows(), c, |i, j| g.get(i, offset + j));
                    accumulate(grads, p, d);
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let mut d = Mat::zeros(va.rows(), va.cols());
                for i in 0..g.rows() {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(grads, *a, d);
            }
            Op::GatherRows(a, index) => {
                let va = self.value(*a);
                let mut d = Mat::zeros(va.rows(), va.cols());
                for (r, &i) in index.iter().enumerate() {
                    for (dv, x) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *dv += x;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::SegmentMax { input, winners } => {
                let va = self.value(*input);
                let c = va.cols();
                let mut d = Mat::zeros(va.rows(), c);
                for (k, &w) in winners.iter().enumerate() {
                    let (s, j) = (k / c, k % c);
                    d.data_mut()[w * c + j] += g.get(s, j);
                }
                accumulate(grads, *input, d);
            }
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let mut d = Mat::zeros(p.rows(), p.cols());
                for i in 0..p.rows() {
                    let dot: f64 = p.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
                    for ((dv, pv), gv) in d.row_mut(i).iter_mut().zip(p.row(i)).zip(g.row(i)) {
                        *dv = pv * (gv - dot);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::PairBias(q, r) => {
                let (vq, vr) = (self.value(*q), self.value(*r));
                let (n, m, c) = (vq.rows(), g.cols(), vq.cols());
                let mut dq = Mat::zeros(n, c);
                let mut dr = Mat::zeros(vr.rows(), c);
                for i in 0..n {
                    for j in 0..m {
                        let gij = g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        let rrow = vr.row(i * m + j);
                        for (dv, x) in dq.row_mut(i).iter_mut().zip(rrow) {
                            *dv += gij * x;
                        }
                        for (dv, x) in dr.row_mut(i * m + j).iter_mut().zip(vq.row(i)) {
                            *dv += gij * x;
                        }
                    }
                }
                accumulate(grads, *q, dq);
                accumulate(grads, *r, dr);
            }
            Op::Augment(c, slack) => {
                let (m, n) = self.value(*c).shape();
                let dc = Mat::from_fn(m, n, |i, j| g.get(i, j));
                let mut ds = 0.0;
                for i in 0..m {
                    ds += g.get(i, n);
                }
                for j in 0..=n {
                    ds += g.get(m, j);
                }
                accumulate(grads, *c, dc);
                accumulate(grads, *slack, Mat::scalar(ds));
            }
            Op::NormRows(a, log_mass) => {
                let out = &node.value;
                let mut d = g.clone();
                for (i, target) in log_mass.iter().enumerate() {
                    let gsum: f64 = g.row(i).iter().sum();
                    for (dv, o) in d.row_mut(i).iter_mut().zip(out.row(i)) {
                        *dv -= (o - target).exp() * gsum;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::NormCols(a, log_mass) => {
                let out = &node.value;
                let mut d = g.clone();
                for (j, target) in log_mass.iter().enumerate() {
                    let gsum: f64 = (0..g.rows()).map(|i| g.get(i, j)).sum();
                    for i in 0..g.rows() {
                        let v = d.get(i, j) - (out.get(i, j) - target).exp() * gsum;
                        d.set(i, j, v);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::GapLoss(state) => {
                let v = self.value(state.input);
                let (m, n) = (v.rows() - 1, v.cols() - 1);
                let scale = g.scalar_value();
                let mut d = Mat::zeros(m + 1, n + 1);
                for (i, &t) in state.row_truth.iter().enumerate() {
                    let anchor = v.get(i, t);
                    let hinges: Vec<f64> = (0..=n).map(|k| -anchor + v.get(i, k) + state.alpha).collect();
                    let s = 1.0 + hinges.iter().map(|h| h.max(0.0)).sum::<f64>();
                    for (k, h) in hinges.iter().enumerate() {
                        if *h > 0.0 {
                            let w = scale / s;
                            d.data_mut()[i * (n + 1) + k] += w;
                            d.data_mut()[i * (n + 1) + t] -= w;
                        }
                    }
                }
                for (j, &t) in state.col_truth.iter().enumerate() {
                    let anchor = v.get(t, j);
                    let hinges: Vec<f64> = (0..=m).map(|k| -anchor + v.get(k, j) + state.alpha).collect();
                    let s = 1.0 + hinges.iter().map(|h| h.max(0.0)).sum::<f64>();
                    for (k, h) in hinges.iter().enumerate() {
                        if *h > 0.0 {
                            let w = scale / s;
                            d.data_mut()[k * (n + 1) + j] += w;
                            d.data_mut()[t * (n + 1) + j] -= w;
                        }
                    }
                }
                accumulate(grads, state.input, d);
            }
            Op::Sum(parts) => {
                for &p in parts {
                    accumulate(grads, p, g.clone());
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, d: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn accumulate_gemm(
    grads: &mut [Option<Mat>],
    target: Var,
    a: &Mat,
    trans_a: bool,
    b: &Mat,
    trans_b: bool,
    shape: (usize, usize),
) {
    match &mut grads[target.0] {
        Some(existing) => gemm(a, trans_a, b, trans_b, 1.0, 1.0, existing),
        slot @ None => {
            let mut d = Mat::zeros(shape.0, shape.1);
            gemm(a, trans_a, b, trans_b, 1.0, 0.0, &mut d);
            *slot = Some(d);
        }
    }
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled to `shape` if it does not reach the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }
}
