//! Reverse-mode tape.
//!
//! Every primitive pushes a node holding its output value and whatever it
//! needs for the vector-Jacobian product. `backward` walks the nodes in
//! reverse order, so gradients reach every leaf that participated in the
//! forward pass; leaves that did not participate keep a zero gradient.

use std::collections::{BTreeMap, HashMap};

use super::linalg::gemm;
use super::{softmax_in_place, GradSet, ParamId, ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddBroadcast(Var, Var),
    AddAtPos { x: Var, e: Var, pos: usize },
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Silu(Var),
    SoftmaxLast(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    SelectPos { x: Var, pos: usize },
    MeanPos(Var),
    BroadcastBatch(Var),
    Reshape(Var),
    Column { x: Var, idx: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::AddAtPos { .. } => "add_at_pos",
            Op::Scale(..) => "scale",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Silu(_) => "silu",
            Op::SoftmaxLast(_) => "softmax",
            Op::Attention { .. } => "attention",
            Op::SelectPos { .. } => "select_pos",
            Op::MeanPos(_) => "mean_pos",
            Op::BroadcastBatch(_) => "broadcast_batch",
            Op::Reshape(_) => "reshape",
            Op::Column { .. } => "column",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded nodes per primitive kind.
    pub fn op_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for n in &self.nodes {
            *counts.entry(n.op.name()).or_insert(0) += 1;
        }
        counts
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{} output", op.name())));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t, false, None)
    }

    /// Free leaf that receives a gradient (used by tests and probes).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.leaf(t, true, None)
    }

    /// Bind a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.leaf(store.get(id).clone(), store.is_trainable(id), Some(id));
        self.params.insert(id, v);
        v
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x · w (+ b)` over the last axis of `x`; `w: [K, M]`, `b: [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(Error::Shape(format!("linear: x {xs:?} with w {ws:?}")));
        }
        let (k, m) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::Shape(format!(
                    "linear: bias {:?} for output width {m}",
                    self.shape(b)
                )));
            }
        }
        let n = self.value(x).len() / k;
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(m) {
                for (o, bb) in row.iter_mut().zip(bd) {
                    *o += bb;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = m;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s shape.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape(format!("add_broadcast: {sa:?} with {sb:?}")));
        }
        let mut out = self.value(a).clone();
        let bd = self.value(b).data();
        for chunk in out.data_mut().chunks_mut(bd.len()) {
            for (o, v) in chunk.iter_mut().zip(bd) {
                *o += v;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::AddBroadcast(a, b), rg)
    }

    /// Adds `e: [D]` to position `pos` of every sequence in `x: [B, S, D]`.
    pub fn add_at_pos(&mut self, x: Var, e: Var, pos: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || pos >= xs[1] || self.shape(e) != [xs[2]] {
            return Err(Error::Shape(format!(
                "add_at_pos: x {xs:?}, e {:?}, pos {pos}",
                self.shape(e)
            )));
        }
        let (s, d) = (xs[1], xs[2]);
        let mut out = self.value(x).clone();
        let ed = self.value(e).data().to_vec();
        for seq in out.data_mut().chunks_mut(s * d) {
            for (o, v) in seq[pos * d..(pos + 1) * d].iter_mut().zip(&ed) {
                *o += v;
            }
        }
        let rg = self.rg(x) || self.rg(e);
        self.push(out, Op::AddAtPos { x, e, pos }, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.scale_assign(c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Layer normalization over the last axis with gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm: width {d} with gamma {:?} beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xv = self.value(x);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
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

    /// `x · σ(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= super::sigmoid(*v);
        }
        let rg = self.rg(x);
        self.push(out, Op::Silu(x), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        let d = out.last_dim();
        if d == 0 {
            return Err(Error::Empty("softmax over empty axis".into()));
        }
        for row in out.data_mut().chunks_mut(d) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxLast(x), rg)
    }

    /// Scaled dot-product attention split into `heads` heads, without
    /// projections. `q: [B, Q, D]`, `k, v: [B, S, D]`, scale `1/√(D/heads)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (qs, ks, vs) = (
            self.shape(q).to_vec(),
            self.shape(k).to_vec(),
            self.shape(v).to_vec(),
        );
        if qs.len() != 3 || ks.len() != 3 || ks != vs || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(Error::Shape(format!(
                "attention: q {qs:?}, k {ks:?}, v {vs:?}"
            )));
        }
        let (b, nq, d) = (qs[0], qs[1], qs[2]);
        let s = ks[1];
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!(
                "attention: width {d} not divisible by {heads} heads"
            )));
        }
        if s == 0 {
            return Err(Error::Empty("attention over zero positions".into()));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![0.0; b * heads * nq * s];
        let mut out = vec![0.0; b * nq * d];
        for bi in 0..b {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..nq {
                    let qrow = &qd[(bi * nq + i) * d + off..][..dh];
                    let p = &mut probs[((bi * heads + h) * nq + i) * s..][..s];
                    for (j, pj) in p.iter_mut().enumerate() {
                        let krow = &kd[(bi * s + j) * d + off..][..dh];
                        *pj = scale * qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    softmax_in_place(p);
                    let orow = &mut out[(bi * nq + i) * d + off..][..dh];
                    for (j, pj) in p.iter().enumerate() {
                        let vrow = &vd[(bi * s + j) * d + off..][..dh];
                        for (o, vv) in orow.iter_mut().zip(vrow) {
                            *o += pj * vv;
                        }
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            Tensor::new(vec![b, nq, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        )
    }

    /// `[B, S, D] → [B, D]` at sequence position `pos`.
    pub fn select_pos(&mut self, x: Var, pos: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || pos >= xs[1] {
            return Err(Error::Shape(format!("select_pos {pos} of {xs:?}")));
        }
        let (b, s, d) = (xs[0], xs[1], xs[2]);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            out.extend_from_slice(&xd[(bi * s + pos) * d..][..d]);
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![b, d], out)?, Op::SelectPos { x, pos }, rg)
    }

    /// Mean over the sequence axis, `[B, S, D] → [B, D]`.
    pub fn mean_pos(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[1] == 0 {
            return Err(Error::Shape(format!("mean_pos of {xs:?}")));
        }
        let (b, s, d) = (xs[0], xs[1], xs[2]);
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            for j in 0..s {
                for c in 0..d {
                    out[bi * d + c] += xd[(bi * s + j) * d + c];
                }
            }
        }
        for v in &mut out {
            *v /= s as f64;
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![b, d], out)?, Op::MeanPos(x), rg)
    }

    /// Repeat a `[1, ...]` tensor along a new batch of size `batch`.
    pub fn broadcast_batch(&mut self, x: Var, batch: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.first() != Some(&1) {
            return Err(Error::Shape(format!("broadcast_batch of {xs:?}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len() * batch);
        for _ in 0..batch {
            out.extend_from_slice(src);
        }
        let mut shape = xs;
        shape[0] = batch;
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::BroadcastBatch(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    /// `[N, M] → [N]`, column `idx`.
    pub fn column(&mut self, x: Var, idx: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || idx >= xs[1] {
            return Err(Error::Shape(format!("column {idx} of {xs:?}")));
        }
        let m = xs[1];
        let out: Vec<f64> = self.value(x).data().chunks(m).map(|r| r[idx]).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(vec![xs[0]], out)?, Op::Column { x, idx }, rg)
    }

    /// Propagate `seed = ∂L/∂out` back through the tape.
    pub fn backward(&self, out: Var, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.shape(out) {
            return Err(Error::Shape(format!(
                "backward seed {:?} for output {:?}",
                seed.shape(),
                self.shape(out)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed.clone());
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.vjp(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (k, m) = (self.shape(*w)[0], self.shape(*w)[1]);
                let n = gd.len() / m;
                if self.rg(*x) {
                    let wv = self.value(*w).data();
                    accumulate(grads, *x, self.value(*x), |dx| {
                        gemm(n, m, k, gd, false, wv, true, 1.0, dx)
                    });
                }
                if self.rg(*w) {
                    let xv = self.value(*x).data();
                    accumulate(grads, *w, self.value(*w), |dw| {
                        gemm(k, n, m, xv, true, gd, false, 1.0, dw)
                    });
                }
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    accumulate(grads, b, self.value(b), |db| {
                        for row in gd.chunks(m) {
                            for (d, r) in db.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.rg(*v) {
                        accumulate(grads, *v, self.value(*v), |d| add_into(d, gd));
                    }
                }
            }
            Op::AddBroadcast(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, self.value(*a), |d| add_into(d, gd));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, self.value(*b), |d| {
                        for chunk in gd.chunks(d.len()) {
                            add_into(d, chunk);
                        }
                    });
                }
            }
            Op::AddAtPos { x, e, pos } => {
                if self.rg(*x) {
                    accumulate(grads, *x, self.value(*x), |d| add_into(d, gd));
                }
                if self.rg(*e) {
                    let xs = self.shape(*x);
                    let (s, dm) = (xs[1], xs[2]);
                    accumulate(grads, *e, self.value(*e), |de| {
                        for seq in gd.chunks(s * dm) {
                            add_into(de, &seq[pos * dm..(pos + 1) * dm]);
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    accumulate(grads, *a, self.value(*a), |d| {
                        for (o, v) in d.iter_mut().zip(gd) {
                            *o += c * v;
                        }
                    });
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.value(*gamma).len();
                if self.rg(*x) {
                    let gm = self.value(*gamma).data();
                    accumulate(grads, *x, self.value(*x), |dx| {
                        for (r, rs) in rstd.iter().enumerate() {
                            let gr = &gd[r * d..(r + 1) * d];
                            let hr = &xhat[r * d..(r + 1) * d];
                            let mut mean_g = 0.0;
                            let mut mean_gh = 0.0;
                            for j in 0..d {
                                let gg = gr[j] * gm[j];
                                mean_g += gg;
                                mean_gh += gg * hr[j];
                            }
                            mean_g /= d as f64;
                            mean_gh /= d as f64;
                            for j in 0..d {
                                let gg = gr[j] * gm[j];
                                dx[r * d + j] += rs * (gg - mean_g - hr[j] * mean_gh);
                            }
                        }
                    });
                }
                if self.rg(*gamma) {
                    accumulate(grads, *gamma, self.value(*gamma), |dg| {
                        for (gr, hr) in gd.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                dg[j] += gr[j] * hr[j];
                            }
                        }
                    });
                }
                if self.rg(*beta) {
                    accumulate(grads, *beta, self.value(*beta), |db| {
                        for gr in gd.chunks(d) {
                            add_into(db, gr);
                        }
                    });
                }
            }
            Op::Silu(x) => {
                if self.rg(*x) {
                    let xv = self.value(*x).data();
                    accumulate(grads, *x, self.value(*x), |dx| {
                        for ((o, xi), gi) in dx.iter_mut().zip(xv).zip(gd) {
                            let s = super::sigmoid(*xi);
                            *o += gi * s * (1.0 + xi * (1.0 - s));
                        }
                    });
                }
            }
            Op::SoftmaxLast(x) => {
                if self.rg(*x) {
                    let y = node.value.data();
                    let d = node.value.last_dim();
                    accumulate(grads, *x, self.value(*x), |dx| {
                        for ((dr, yr), gr) in dx.chunks_mut(d).zip(y.chunks(d)).zip(gd.chunks(d)) {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..d {
                                dr[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.attention_vjp(*q, *k, *v, *heads, probs, gd, grads),
            Op::SelectPos { x, pos } => {
                if self.rg(*x) {
                    let xs = self.shape(*x);
                    let (s, d) = (xs[1], xs[2]);
                    accumulate(grads, *x, self.value(*x), |dx| {
                        for (bi, gr) in gd.chunks(d).enumerate() {
                            add_into(&mut dx[(bi * s + pos) * d..][..d], gr);
                        }
                    });
                }
            }
            Op::MeanPos(x) => {
                if self.rg(*x) {
                    let xs = self.shape(*x);
                    let (s, d) = (xs[1], xs[2]);
                    let inv = 1.0 / s as f64;
                    accumulate(grads, *x, self.value(*x), |dx| {
                        for (bi, gr) in gd.chunks(d).enumerate() {
                            for j in 0..s {
                                for (o, gv) in dx[(bi * s + j) * d..][..d].iter_mut().zip(gr) {
                                    *o += gv * inv;
                                }
                            }
                        }
                    });
                }
            }
            Op::BroadcastBatch(x) => {
                if self.rg(*x) {
                    accumulate(grads, *x, self.value(*x), |dx| {
                        let n = dx.len();
                        for chunk in gd.chunks(n) {
                            add_into(dx, chunk);
                        }
                    });
                }
            }
            Op::Reshape(x) => {
                if self.rg(*x) {
                    accumulate(grads, *x, self.value(*x), |dx| add_into(dx, gd));
                }
            }
            Op::Column { x, idx } => {
                if self.rg(*x) {
                    let m = self.shape(*x)[1];
                    accumulate(grads, *x, self.value(*x), |dx| {
                        for (r, gv) in gd.iter().enumerate() {
                            dx[r * m + idx] += gv;
                        }
                    });
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_vjp(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[f64],
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let qs = self.shape(q);
        let (b, nq, d) = (qs[0], qs[1], qs[2]);
        let s = self.shape(k)[1];
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut dq = vec![0.0; qd.len()];
        let mut dk = vec![0.0; kd.len()];
        let mut dv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; s];
        for bi in 0..b {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..nq {
                    let p = &probs[((bi * heads + h) * nq + i) * s..][..s];
                    let go = &gd[(bi * nq + i) * d + off..][..dh];
                    for j in 0..s {
                        let vrow = &vd[(bi * s + j) * d + off..][..dh];
                        dp[j] = go.iter().zip(vrow).map(|(a, b)| a * b).sum();
                        let dvrow = &mut dv[(bi * s + j) * d + off..][..dh];
                        for (o, gv) in dvrow.iter_mut().zip(go) {
                            *o += p[j] * gv;
                        }
                    }
                    let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    let qrow = &qd[(bi * nq + i) * d + off..][..dh];
                    for j in 0..s {
                        let ds = p[j] * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = &kd[(bi * s + j) * d + off..][..dh];
                        let dqrow = &mut dq[(bi * nq + i) * d + off..][..dh];
                        for (o, kv) in dqrow.iter_mut().zip(krow) {
                            *o += ds * kv;
                        }
                        let dkrow = &mut dk[(bi * s + j) * d + off..][..dh];
                        for (o, qv) in dkrow.iter_mut().zip(qrow) {
                            *o += ds * qv;
                        }
                    }
                }
            }
        }
        for (var, delta) in [(q, dq), (k, dk), (v, dv)] {
            if self.rg(var) {
                accumulate(grads, var, self.value(var), |d| add_into(d, &delta));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(
    grads: &mut [Option<Tensor>],
    v: Var,
    like: &Tensor,
    f: impl FnOnce(&mut [f64]),
) {
    let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()));
    f(slot.data_mut());
}

/// Result of [`Tape::backward`]; holds gradients of leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, `None` if it received none.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of bound parameters, zero for those not on the tape or frozen.
    pub fn params(&self, tape: &Tape, store: &ParamStore) -> GradSet {
        let mut set = store.zero_grads();
        for (i, node) in tape.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, &self.grads[i]) {
                if node.requires_grad {
                    set.grads[pid.0].add_assign(g);
                }
            }
        }
        set
    }
}

