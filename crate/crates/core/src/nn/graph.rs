//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is a tape built while running a forward pass. Parameters are
//! pulled from a [`ParamSet`] by name (once per graph); [`Graph::backward`]
//! returns gradients keyed by the same names.

use std::collections::{BTreeMap, HashMap};

use super::mask::AttentionMask;
use super::params::ParamSet;
use super::tensor::{softmax, Matrix};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(String),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Matrix>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
    SquaredError {
        pred: Var,
        targets: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

pub type Grads = BTreeMap<String, Matrix>;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, store: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let m = store
            .get(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))?
            .clone();
        let v = self.push(m, Op::Param(name.to_owned()));
        self.params.insert(name.to_owned(), v);
        Ok(v)
    }

    /// Attention probabilities (one `q x k` matrix per head) recorded by an
    /// attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[Matrix]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_bt(self.value(b));
        self.push(out, Op::MatMulBT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1, "add_row expects a single row");
        let mut out = self.value(a).clone();
        assert_eq!(out.cols, r.cols, "add_row width");
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scaled(s);
        self.push(out, Op::Scale(a, s))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let mut out = self.value(a).clone();
        for (o, m) in out.data.iter_mut().zip(&c.data) {
            *o *= m;
        }
        self.push(out, Op::MulConst(a, c))
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            let t = (GELU_C * (*x + 0.044715 * *x * *x * *x)).tanh();
            *x = 0.5 * *x * (1.0 + t);
        }
        self.push(out, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mu) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = xhat.clone();
        for r in 0..rows {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = *o * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention. `q` is `n x d`, `k` and `v`
    /// are `m x d`; heads split the `d` columns evenly. Disallowed pairs get
    /// zero probability; a fully masked row yields a zero output row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttentionMask) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.shape();
        let m = kv.rows;
        assert_eq!((mask.q_len(), mask.k_len()), (n, m), "attention mask shape");
        assert_eq!(d % heads, 0, "heads must divide width");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        let mut scores = vec![0.0; m];
        for h in 0..heads {
            let off = h * dh;
            let mut p = Matrix::zeros(n, m);
            for i in 0..n {
                let qi = &qv.row(i)[off..off + dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = if mask.allows(i, j) {
                        let kj = &kv.row(j)[off..off + dh];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                let pr = softmax(&scores);
                let orow = &mut out.row_mut(i)[off..off + dh];
                for (j, &pj) in pr.iter().enumerate() {
                    if pj != 0.0 {
                        let vj = &vv.row(j)[off..off + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
                p.row_mut(i).copy_from_slice(&pr);
            }
            probs.push(p);
        }
        self.push(out, Op::Attention { q, k, v, heads, probs })
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows width");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).rows_slice(start, end);
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols);
        for r in 0..m.rows {
            for (o, x) in out.data.iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        out.scale(1.0 / m.rows as f64);
        self.push(out, Op::MeanRows(a))
    }

    /// Mean token-level cross-entropy of `logits` (`n x V`) against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows, targets.len(), "cross_entropy targets");
        let mut probs = Matrix::zeros(l.rows, l.cols);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let p = softmax(l.row(r));
            loss -= p[t].max(f64::MIN_POSITIVE).ln();
            probs.row_mut(r).copy_from_slice(&p);
        }
        loss /= targets.len() as f64;
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean squared error of an `n x 1` prediction column.
    pub fn squared_error(&mut self, pred: Var, targets: &[f64]) -> Var {
        let p = self.value(pred);
        assert_eq!(p.len(), targets.len(), "squared_error targets");
        let loss = p.data.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / targets.len() as f64;
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::SquaredError {
                pred,
                targets: targets.to_vec(),
            },
        )
    }

    /// Backpropagates from a scalar node and returns parameter gradients.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let rv = self.value(root);
        grads[root.0] = Some(Matrix::filled(rv.rows, rv.cols, 1.0));
        let mut out = Grads::new();

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(name) => {
                    out.insert(name.clone(), g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_bt(self.value(*b));
                    let gb = self.value(*a).matmul_at(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulBT(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let ga = g.matmul(self.value(*b));
                    let gb = g.matmul_at(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in gr.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scaled(*s)),
                Op::MulConst(a, c) => {
                    let mut ga = g;
                    for (x, m) in ga.data.iter_mut().zip(&c.data) {
                        *x *= m;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (gx, &xv) in ga.data.iter_mut().zip(&x.data) {
                        let u = GELU_C * (xv + 0.044715 * xv * xv * xv);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * xv * xv);
                        *gx *= 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gm = self.value(*gamma);
                    let (rows, cols) = g.shape();
                    let n = cols as f64;
                    let mut gx = Matrix::zeros(rows, cols);
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gb = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        let dxhat: Vec<f64> = gr.iter().zip(&gm.data).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            gx.data[r * cols + c] = inv_std[r] / n * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
                            gg.data[c] += gr[c] * xh[c];
                            gb.data[c] += gr[c];
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gb);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (n, d) = qv.shape();
                    let m = kv.rows;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Matrix::zeros(n, d);
                    let mut gk = Matrix::zeros(m, d);
                    let mut gv = Matrix::zeros(m, d);
                    let mut dp = vec![0.0; m];
                    for (h, p) in probs.iter().enumerate() {
                        let off = h * dh;
                        for i in 0..n {
                            let go = &g.row(i)[off..off + dh];
                            let pr = p.row(i);
                            let mut s = 0.0;
                            for j in 0..m {
                                if pr[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                let vj = &vv.row(j)[off..off + dh];
                                dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                s += dp[j] * pr[j];
                                let gvj = &mut gv.row_mut(j)[off..off + dh];
                                for (o, x) in gvj.iter_mut().zip(go) {
                                    *o += pr[j] * x;
                                }
                            }
                            for j in 0..m {
                                if pr[j] == 0.0 {
                                    continue;
                                }
                                let ds = pr[j] * (dp[j] - s) * scale;
                                let kj = &kv.row(j)[off..off + dh];
                                let qi = &qv.row(i)[off..off + dh];
                                let gqi = &mut gq.row_mut(i)[off..off + dh];
                                for (o, x) in gqi.iter_mut().zip(kj) {
                                    *o += ds * x;
                                }
                                let gkj = &mut gk.row_mut(j)[off..off + dh];
                                for (o, x) in gkj.iter_mut().zip(qi) {
                                    *o += ds * x;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, x) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows;
                        acc(&mut grads, p, g.rows_slice(start, start + rows));
                        start += rows;
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows, src.cols);
                    let cols = src.cols;
                    ga.data[start * cols..(start + g.rows) * cols].copy_from_slice(&g.data);
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows, src.cols);
                    let inv = 1.0 / src.rows as f64;
                    for r in 0..src.rows {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(&g.data) {
                            *o = x * inv;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let upstream = g.data[0] / targets.len() as f64;
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gl.data[r * gl.cols + t] -= 1.0;
                    }
                    gl.scale(upstream);
                    acc(&mut grads, *logits, gl);
                }
                Op::SquaredError { pred, targets } => {
                    let p = self.value(*pred);
                    let upstream = g.data[0] * 2.0 / targets.len() as f64;
                    let data = p.data.iter().zip(targets).map(|(a, b)| upstream * (a - b)).collect();
                    acc(&mut grads, *pred, Matrix::from_vec(p.rows, p.cols, data));
                }
            }
        }
        out
    }
}
