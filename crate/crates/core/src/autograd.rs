//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! through [`Graph::param`] and are tagged with their [`ParamId`], so
//! [`Graph::backward`] can return gradients keyed by parameter.

use crate::tensor::{matmul_acc, matmul_t_acc, t_matmul_acc, Matrix};

/// Index of a parameter tensor inside a [`crate::model::ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Handle to a node of the current graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Patches {
        x: Var,
        h: usize,
        w: usize,
        k: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        norm: f64,
    },
    Bce {
        logits: Var,
        targets: Matrix,
        norm: f64,
    },
    L1 {
        pred: Var,
        target: Matrix,
        norm: f64,
    },
    Giou {
        pred: Var,
        target: Matrix,
        norm: f64,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Parameter gradients produced by one backward pass, in first-use order.
#[derive(Debug, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Matrix)>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.entries.iter().map(|(id, m)| (*id, m))
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, m)| m)
    }

    fn accumulate(&mut self, id: ParamId, g: Matrix) {
        match self.entries.iter_mut().find(|(p, _)| *p == id) {
            Some((_, acc)) => acc.add_assign(&g),
            None => self.entries.push((id, g)),
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId, m: &Matrix) -> Var {
        self.push(m.clone(), Op::Param(id), true)
    }

    /// Copies the value of `v` into a new leaf; gradients do not flow back.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(m, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let m = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(m, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut m = self.value(a).clone();
        m.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(m, Op::Add(a, b), rg)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), self.value(a).cols());
        let r = r.data().to_vec();
        let mut m = self.value(a).clone();
        for i in 0..m.rows() {
            for (o, b) in m.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(m, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let m = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(m, Op::Scale(a, s), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let m = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(m, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let m = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(m, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut m = self.value(a).clone();
        for i in 0..m.rows() {
            softmax_in_place(m.row_mut(i));
        }
        let rg = self.rg(a);
        self.push(m, Op::SoftmaxRows(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            for (o, v) in xhat.row_mut(i).iter_mut().zip(r) {
                *o = (v - mean) * s;
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.clone();
        for i in 0..rows {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = *o * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols());
        let mut m = Matrix::zeros(av.rows(), len);
        for i in 0..av.rows() {
            m.row_mut(i).copy_from_slice(&av.row(i)[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(m, Op::SliceCols(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut m = Matrix::zeros(rows, total);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows);
            for i in 0..rows {
                m.row_mut(i)[off..off + pv.cols()].copy_from_slice(pv.row(i));
            }
            off += pv.cols();
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(m, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut m = Matrix::zeros(idx.len(), av.cols());
        for (o, &i) in idx.iter().enumerate() {
            m.row_mut(o).copy_from_slice(av.row(i));
        }
        let rg = self.rg(a);
        self.push(m, Op::GatherRows(a, idx.to_vec()), rg)
    }

    /// Rearranges an `(h·w) × c` token grid into non-overlapping `k × k`
    /// patches: output is `((h/k)·(w/k)) × (k·k·c)`.
    pub fn patches(&mut self, x: Var, h: usize, w: usize, k: usize) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        assert_eq!(xv.rows(), h * w);
        assert!(h % k == 0 && w % k == 0);
        let (ho, wo) = (h / k, w / k);
        let mut m = Matrix::zeros(ho * wo, k * k * c);
        for oy in 0..ho {
            for ox in 0..wo {
                let orow = m.row_mut(oy * wo + ox);
                for ky in 0..k {
                    for kx in 0..k {
                        let src = (oy * k + ky) * w + ox * k + kx;
                        let dst = (ky * k + kx) * c;
                        orow[dst..dst + c].copy_from_slice(xv.row(src));
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(m, Op::Patches { x, h, w, k }, rg)
    }

    /// `Σ_i weights[i] · CE(logits_i, targets[i]) / norm`, as a `1 × 1` node.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
        norm: f64,
    ) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len());
        assert_eq!(lv.rows(), weights.len());
        let mut total = 0.0;
        for i in 0..lv.rows() {
            let r = lv.row(i);
            total += weights[i] * (log_sum_exp(r) - r[targets[i]]);
        }
        let rg = self.rg(logits);
        self.push(
            Matrix::filled(1, 1, total / norm),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                norm,
            },
            rg,
        )
    }

    /// Summed binary cross-entropy over all entries, from logits, `/ norm`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Matrix, norm: f64) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.shape(), targets.shape());
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| bce_logit(z, y))
            .sum();
        let rg = self.rg(logits);
        self.push(
            Matrix::filled(1, 1, total / norm),
            Op::Bce {
                logits,
                targets,
                norm,
            },
            rg,
        )
    }

    /// `Σ |pred − target| / norm`.
    pub fn l1(&mut self, pred: Var, target: Matrix, norm: f64) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape());
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t).abs())
            .sum();
        let rg = self.rg(pred);
        self.push(
            Matrix::filled(1, 1, total / norm),
            Op::L1 { pred, target, norm },
            rg,
        )
    }

    /// `Σ_i (1 − gIoU(pred_i, target_i)) / norm` over center-form box rows.
    pub fn giou_loss(&mut self, pred: Var, target: Matrix, norm: f64) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.cols(), 4);
        assert_eq!(pv.shape(), target.shape());
        let total: f64 = (0..pv.rows())
            .map(|i| giou_terms(pv.row(i), target.row(i)).0)
            .sum();
        let rg = self.rg(pred);
        self.push(
            Matrix::filled(1, 1, total / norm),
            Op::Giou { pred, target, norm },
            rg,
        )
    }

    /// Weighted sum of `1 × 1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut total = 0.0;
        for (v, w) in terms {
            total += w * self.scalar(*v);
        }
        let rg = terms.iter().any(|(v, _)| self.rg(*v));
        self.push(Matrix::filled(1, 1, total), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let bv = self.value(*b);
                        let mut ga = Matrix::zeros(g.rows(), bv.rows());
                        matmul_t_acc(&g, bv, &mut ga);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let av = self.value(*a);
                        let mut gb = Matrix::zeros(av.cols(), g.cols());
                        t_matmul_acc(av, &g, &mut gb);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    // c = a bᵀ: da = g b, db = gᵀ a
                    if self.rg(*a) {
                        let bv = self.value(*b);
                        let mut ga = Matrix::zeros(g.rows(), bv.cols());
                        matmul_acc(&g, bv, &mut ga);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let av = self.value(*a);
                        let mut gb = Matrix::zeros(g.cols(), av.cols());
                        t_matmul_acc(&g, av, &mut gb);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) && self.rg(*b) {
                        accumulate(&mut grads, *a, g.clone());
                        accumulate(&mut grads, *b, g);
                    } else if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    } else if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let mut gr = Matrix::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (o, v) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, s) => {
                    let mut ga = g;
                    ga.scale_assign(*s);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (gv, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        let u = GELU_C * (xv + 0.044715 * xv * xv * xv);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * xv * xv);
                        *gv *= 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    for (gv, &y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                        *gv *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g;
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = ga.row_mut(i);
                        let s: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for (gv, &yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - s);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (rows, cols) = g.shape();
                    if self.rg(*gamma) || self.rg(*beta) {
                        let mut gg = Matrix::zeros(1, cols);
                        let mut gb = Matrix::zeros(1, cols);
                        for i in 0..rows {
                            for j in 0..cols {
                                gg.data_mut()[j] += g.get(i, j) * xhat.get(i, j);
                                gb.data_mut()[j] += g.get(i, j);
                            }
                        }
                        if self.rg(*gamma) {
                            accumulate(&mut grads, *gamma, gg);
                        }
                        if self.rg(*beta) {
                            accumulate(&mut grads, *beta, gb);
                        }
                    }
                    if self.rg(*x) {
                        let gam = self.value(*gamma).data();
                        let mut gx = Matrix::zeros(rows, cols);
                        let n = cols as f64;
                        for i in 0..rows {
                            let xh = xhat.row(i);
                            let gr = g.row(i);
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for j in 0..cols {
                                let d = gr[j] * gam[j];
                                m1 += d;
                                m2 += d * xh[j];
                            }
                            m1 /= n;
                            m2 /= n;
                            let out = gx.row_mut(i);
                            for j in 0..cols {
                                out[j] = rstd[i] * (gr[j] * gam[j] - m1 - xh[j] * m2);
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    let len = g.cols();
                    for i in 0..g.rows() {
                        ga.row_mut(i)[*start..*start + len].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        if self.rg(*p) {
                            let mut gp = Matrix::zeros(g.rows(), c);
                            for i in 0..g.rows() {
                                gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                            }
                            accumulate(&mut grads, *p, gp);
                        }
                        off += c;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for (o, &i) in idx.iter().enumerate() {
                        for (d, s) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Patches { x, h, w, k } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let (ho, wo) = (h / k, w / k);
                    let mut gx = Matrix::zeros(xv.rows(), c);
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let grow = g.row(oy * wo + ox);
                            for ky in 0..*k {
                                for kx in 0..*k {
                                    let dst = (oy * k + ky) * w + ox * k + kx;
                                    let src = (ky * k + kx) * c;
                                    gx.row_mut(dst).copy_from_slice(&grow[src..src + c]);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    norm,
                } => {
                    let up = g.get(0, 0) / norm;
                    let mut gl = self.value(*logits).clone();
                    for i in 0..gl.rows() {
                        let r = gl.row_mut(i);
                        softmax_in_place(r);
                        r[targets[i]] -= 1.0;
                        for v in r.iter_mut() {
                            *v *= weights[i] * up;
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Bce {
                    logits,
                    targets,
                    norm,
                } => {
                    let up = g.get(0, 0) / norm;
                    let lv = self.value(*logits);
                    let mut gl = Matrix::zeros(lv.rows(), lv.cols());
                    for ((o, &z), &y) in gl.data_mut().iter_mut().zip(lv.data()).zip(targets.data())
                    {
                        *o = (sigmoid(z) - y) * up;
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::L1 { pred, target, norm } => {
                    let up = g.get(0, 0) / norm;
                    let pv = self.value(*pred);
                    let mut gp = Matrix::zeros(pv.rows(), pv.cols());
                    for ((o, &p), &t) in gp.data_mut().iter_mut().zip(pv.data()).zip(target.data()) {
                        *o = if p > t {
                            up
                        } else if p < t {
                            -up
                        } else {
                            0.0
                        };
                    }
                    accumulate(&mut grads, *pred, gp);
                }
                Op::Giou { pred, target, norm } => {
                    let up = g.get(0, 0) / norm;
                    let pv = self.value(*pred);
                    let mut gp = Matrix::zeros(pv.rows(), 4);
                    for i in 0..pv.rows() {
                        let (_, d) = giou_terms(pv.row(i), target.row(i));
                        for (o, v) in gp.row_mut(i).iter_mut().zip(d) {
                            *o = v * up;
                        }
                    }
                    accumulate(&mut grads, *pred, gp);
                }
                Op::WeightedSum(terms) => {
                    let up = g.get(0, 0);
                    for (v, w) in terms {
                        if self.rg(*v) {
                            accumulate(&mut grads, *v, Matrix::filled(1, 1, up * w));
                        }
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(r: &[f64]) -> f64 {
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(r: &mut [f64]) {
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in r.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in r.iter_mut() {
        *v /= s;
    }
}

/// Stable `−[y log σ(z) + (1 − y) log(1 − σ(z))]`.
#[inline]
pub fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Returns `1 − gIoU(p, t)` and its gradient w.r.t. the center-form `p`.
fn giou_terms(p: &[f64], t: &[f64]) -> (f64, [f64; 4]) {
    let (px0, px1) = (p[0] - p[2] / 2.0, p[0] + p[2] / 2.0);
    let (py0, py1) = (p[1] - p[3] / 2.0, p[1] + p[3] / 2.0);
    let (tx0, tx1) = (t[0] - t[2] / 2.0, t[0] + t[2] / 2.0);
    let (ty0, ty1) = (t[1] - t[3] / 2.0, t[1] + t[3] / 2.0);

    let ap = (px1 - px0) * (py1 - py0);
    let at = (tx1 - tx0) * (ty1 - ty0);
    let iw_raw = px1.min(tx1) - px0.max(tx0);
    let ih_raw = py1.min(ty1) - py0.max(ty0);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let union = ap + at - inter;
    let ew = px1.max(tx1) - px0.min(tx0);
    let eh = py1.max(ty1) - py0.min(ty0);
    let encl = ew * eh;
    let loss = 1.0 - (inter / union - (encl - union) / encl);

    // loss = 2 − I/U − U/E with U = ap + at − I
    let d_inter = -(union + inter) / (union * union) + 1.0 / encl;
    let d_ap = inter / (union * union) - 1.0 / encl;
    let d_encl = union / (encl * encl);

    // corner gradients [x0, y0, x1, y1]
    let mut gc = [0.0; 4];
    // ap = (x1 - x0)(y1 - y0)
    gc[0] -= d_ap * (py1 - py0);
    gc[2] += d_ap * (py1 - py0);
    gc[1] -= d_ap * (px1 - px0);
    gc[3] += d_ap * (px1 - px0);
    if iw_raw > 0.0 && ih_raw > 0.0 {
        if px1 <= tx1 {
            gc[2] += d_inter * ih;
        }
        if px0 >= tx0 {
            gc[0] -= d_inter * ih;
        }
        if py1 <= ty1 {
            gc[3] += d_inter * iw;
        }
        if py0 >= ty0 {
            gc[1] -= d_inter * iw;
        }
    }
    if px1 >= tx1 {
        gc[2] += d_encl * eh;
    }
    if px0 <= tx0 {
        gc[0] -= d_encl * eh;
    }
    if py1 >= ty1 {
        gc[3] += d_encl * ew;
    }
    if py0 <= ty0 {
        gc[1] -= d_encl * ew;
    }
    let grad = [
        gc[0] + gc[2],
        gc[1] + gc[3],
        0.5 * (gc[2] - gc[0]),
        0.5 * (gc[3] - gc[1]),
    ];
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Central-difference check of d(build(x))/dx for the single param `x`.
    fn check(x0: &Matrix, build: impl Fn(&mut Graph, Var) -> Var) {
        let id = ParamId(0);
        let mut g = Graph::new();
        let x = g.param(id, x0);
        let y = build(&mut g, x);
        let analytic = g.backward(y).get(id).unwrap().clone();
        let eps = 1e-6;
        for k in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[k] += delta;
                let mut g = Graph::new();
                let x = g.param(id, &xp);
                let y = build(&mut g, x);
                g.scalar(y)
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[k];
            assert!(
                (a - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "entry {k}: analytic {a} vs fd {fd}"
            );
        }
    }

    fn sum_all(g: &mut Graph, v: Var) -> Var {
        let target = Matrix::zeros(g.value(v).rows(), g.value(v).cols());
        // shifted so no entry sits on the L1 kink
        let c = g.constant(g.value(v).map(|_| 10.0));
        let s = g.scale(v, -1.0);
        let d = g.add(c, s);
        // Σ|10 - v| with v small = Σ(10 - v)
        g.l1(d, target, 1.0)
    }

    #[test]
    fn matmul_and_transpose_gradients() {
        let b = mat(4, 3, 7);
        check(&mat(2, 4, 1), |g, x| {
            let bc = g.constant(b.clone());
            let y = g.matmul(x, bc);
            let y2 = g.matmul_t(y, y);
            sum_all(g, y2)
        });
    }

    #[test]
    fn nonlinearity_gradients() {
        let gamma = mat(1, 5, 3);
        let beta = mat(1, 5, 4);
        check(&mat(3, 5, 2), |g, x| {
            let gm = g.constant(gamma.clone());
            let bt = g.constant(beta.clone());
            let a = g.gelu(x);
            let n = g.layer_norm(a, gm, bt);
            let s = g.softmax_rows(n);
            let t = g.sigmoid(s);
            let cols = g.slice_cols(t, 1, 3);
            let cat = g.concat_cols(&[cols, x]);
            let rows = g.gather_rows(cat, &[2, 0, 2]);
            sum_all(g, rows)
        });
    }

    #[test]
    fn layer_norm_parameter_gradients() {
        let x = mat(3, 6, 9);
        check(&mat(1, 6, 10), |g, gamma| {
            let xc = g.constant(x.clone());
            let beta = g.constant(Matrix::zeros(1, 6));
            let n = g.layer_norm(xc, gamma, beta);
            let w = g.constant(mat(6, 2, 11));
            let o = g.matmul(n, w);
            sum_all(g, o)
        });
    }

    #[test]
    fn patch_gradients() {
        check(&mat(16, 2, 5), |g, x| {
            let p = g.patches(x, 4, 4, 2);
            let w = g.constant(mat(8, 3, 6));
            let y = g.matmul(p, w);
            let y = g.gelu(y);
            sum_all(g, y)
        });
    }

    #[test]
    fn loss_gradients() {
        let targets = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
        check(&mat(2, 3, 12), |g, x| {
            let ce = g.cross_entropy(x, &[2, 0], &[1.0, 0.1], 3.0);
            let bce = g.bce_with_logits(x, targets.clone(), 2.0);
            g.weighted_sum(&[(ce, 1.5), (bce, 0.5)])
        });
    }

    #[test]
    fn giou_gradient_matches_finite_differences() {
        let target = Matrix::from_rows(&[
            vec![0.5, 0.5, 0.3, 0.4],
            vec![0.2, 0.7, 0.1, 0.2],
            vec![0.4, 0.45, 0.2, 0.2],
        ]);
        let pred = Matrix::from_rows(&[
            vec![0.55, 0.45, 0.25, 0.35], // overlapping
            vec![0.7, 0.2, 0.2, 0.1],     // disjoint
            vec![0.43, 0.47, 0.5, 0.6],   // containing
        ]);
        check(&pred, |g, x| g.giou_loss(x, target.clone(), 2.0));
    }

    #[test]
    fn detach_blocks_gradient() {
        let id = ParamId(3);
        let mut g = Graph::new();
        let x = g.param(id, &Matrix::filled(1, 1, 2.0));
        let d = g.detach(x);
        let y = g.add(x, d);
        let grads = g.backward(y);
        assert_eq!(grads.get(id).unwrap().get(0, 0), 1.0);
    }
}
