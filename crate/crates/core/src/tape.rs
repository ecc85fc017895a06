//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records one forward pass through the [`Ops`] interface and
//! runs a single backward sweep from a scalar root. Parameters are read
//! from a borrowed [`ParamStore`]; their gradients come back as a
//! [`Gradients`] bundle aligned with the store.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use crate::loss;
use crate::math;
use crate::ops::{self, Ops};
use crate::{Error, ParamId, ParamStore, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    MatVec(usize, usize),
    MatVecT(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Stack(Vec<usize>),
    Row(usize, usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, inv_std: f64 },
    Sum(Vec<usize>),
    TransducerNll { logits: usize, grad: Vec<f64> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    param_nodes: Vec<Option<usize>>,
    consumed: bool,
}

/// Per-parameter gradients, one tensor per entry of the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self { grads: params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        math::sqrt(self.grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum())
    }
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()], consumed: false }
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_vec(&mut self, data: Vec<f64>, op: Op) -> Var {
        self.push(Cow::Owned(Tensor::vector(data)), op)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Runs the backward sweep from `loss`. A tape supports one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let root = &self.nodes[loss.0].value;
        if !root.is_scalar() {
            return Err(Error::NonScalarLoss(root.shape().to_vec()));
        }
        if !root.item().is_finite() {
            return Err(Error::NonFinite);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatVec(w, x) => {
                    let wt = &self.nodes[*w].value;
                    let xv = self.nodes[*x].value.data();
                    let n = wt.cols();
                    let gw = slot(&mut grads, *w, wt.len());
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            for (a, &b) in gw[i * n..(i + 1) * n].iter_mut().zip(xv) {
                                *a += gi * b;
                            }
                        }
                    }
                    let dx = ops::matvec_t(wt, &g);
                    add_into(slot(&mut grads, *x, n), &dx);
                }
                Op::MatVecT(m, a) => {
                    let mt = &self.nodes[*m].value;
                    let av = self.nodes[*a].value.data();
                    let k = mt.cols();
                    let gm = slot(&mut grads, *m, mt.len());
                    for (i, &ai) in av.iter().enumerate() {
                        for (x, &gj) in gm[i * k..(i + 1) * k].iter_mut().zip(&g) {
                            *x += ai * gj;
                        }
                    }
                    let da = ops::matvec(mt, &g);
                    add_into(slot(&mut grads, *a, av.len()), &da);
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    add_into(slot(&mut grads, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                    let da: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    add_into(slot(&mut grads, *a, g.len()), &da);
                    add_into(slot(&mut grads, *b, g.len()), &db);
                }
                Op::Scale(a, s) => {
                    let d: Vec<f64> = g.iter().map(|x| x * s).collect();
                    add_into(slot(&mut grads, *a, g.len()), &d);
                }
                Op::Sigmoid(a) => {
                    let d: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect();
                    add_into(slot(&mut grads, *a, g.len()), &d);
                }
                Op::Tanh(a) => {
                    let d: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                    add_into(slot(&mut grads, *a, g.len()), &d);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        add_into(slot(&mut grads, p, n), &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.nodes[*a].value.len();
                    let ga = slot(&mut grads, *a, n);
                    add_into(&mut ga[*start..*start + g.len()], &g);
                }
                Op::Stack(rows) => {
                    let k = node.value.cols();
                    for (r, &p) in rows.iter().enumerate() {
                        add_into(slot(&mut grads, p, k), &g[r * k..(r + 1) * k]);
                    }
                }
                Op::Row(m, i) => {
                    let mt = &self.nodes[*m].value;
                    let k = mt.cols();
                    let gm = slot(&mut grads, *m, mt.len());
                    add_into(&mut gm[i * k..(i + 1) * k], &g);
                }
                Op::Softmax(a) => {
                    let dot: f64 = g.iter().zip(out).map(|(x, y)| x * y).sum();
                    let d: Vec<f64> = g.iter().zip(out).map(|(x, y)| y * (x - dot)).collect();
                    add_into(slot(&mut grads, *a, g.len()), &d);
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.iter().sum();
                    let d: Vec<f64> = g.iter().zip(out).map(|(x, y)| x - math::exp(*y) * total).collect();
                    add_into(slot(&mut grads, *a, g.len()), &d);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = self.nodes[*gain].value.data();
                    let n = g.len() as f64;
                    let dxhat: Vec<f64> = g.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / n;
                    let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    let dx: Vec<f64> =
                        dxhat.iter().zip(xhat).map(|(d, h)| inv_std * (d - mean_d - h * mean_dx)).collect();
                    let dg: Vec<f64> = g.iter().zip(xhat).map(|(a, b)| a * b).collect();
                    add_into(slot(&mut grads, *x, g.len()), &dx);
                    add_into(slot(&mut grads, *gain, g.len()), &dg);
                    add_into(slot(&mut grads, *bias, g.len()), &g);
                }
                Op::Sum(parts) => {
                    let s = g[0];
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        slot(&mut grads, p, n).iter_mut().for_each(|x| *x += s);
                    }
                }
                Op::TransducerNll { logits, grad } => {
                    let s = g[0];
                    let gl = slot(&mut grads, *logits, grad.len());
                    for (a, b) in gl.iter_mut().zip(grad) {
                        *a += s * b;
                    }
                }
            }
        }

        let mut out = Gradients::zeros_like(self.params);
        for (pid, node) in self.param_nodes.iter().enumerate() {
            if let Some(Some(g)) = node.map(|n| grads[n].take()) {
                out.grads[pid].data_mut().copy_from_slice(&g);
            }
        }
        Ok(out)
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

impl<'a> Ops for Tape<'a> {
    type V = Var;

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(n) = self.param_nodes[id.0] {
            return Var(n);
        }
        let v = self.push(Cow::Borrowed(self.params.get(id)), Op::Param);
        self.param_nodes[id.0] = Some(v.0);
        v
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf)
    }

    fn value<'s>(&'s self, v: &'s Var) -> &'s Tensor {
        &self.nodes[v.0].value
    }

    fn matvec(&mut self, w: &Var, x: &Var) -> Var {
        let y = ops::matvec(&self.nodes[w.0].value, self.data(*x));
        self.push_vec(y, Op::MatVec(w.0, x.0))
    }

    fn matvec_t(&mut self, m: &Var, a: &Var) -> Var {
        let y = ops::matvec_t(&self.nodes[m.0].value, self.data(*a));
        self.push_vec(y, Op::MatVecT(m.0, a.0))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let y = ops::zip_map(self.data(*a), self.data(*b), |x, y| x + y);
        self.push_vec(y, Op::Add(a.0, b.0))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let y = ops::zip_map(self.data(*a), self.data(*b), |x, y| x * y);
        self.push_vec(y, Op::Mul(a.0, b.0))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let y = self.data(*a).iter().map(|x| x * s).collect();
        self.push_vec(y, Op::Scale(a.0, s))
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let y = self.data(*a).iter().map(|&x| math::sigmoid(x)).collect();
        self.push_vec(y, Op::Sigmoid(a.0))
    }

    fn tanh(&mut self, a: &Var) -> Var {
        let y = self.data(*a).iter().map(|&x| math::tanh(x)).collect();
        self.push_vec(y, Op::Tanh(a.0))
    }

    fn concat(&mut self, parts: &[Var]) -> Var {
        let slices: Vec<&[f64]> = parts.iter().map(|p| self.data(*p)).collect();
        let y = ops::concat(&slices);
        self.push_vec(y, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }

    fn slice(&mut self, a: &Var, start: usize, len: usize) -> Var {
        let y = self.data(*a)[start..start + len].to_vec();
        self.push_vec(y, Op::Slice(a.0, start))
    }

    fn stack(&mut self, rows: &[Var]) -> Var {
        let slices: Vec<&[f64]> = rows.iter().map(|p| self.data(*p)).collect();
        let t = ops::stack(&slices);
        self.push(Cow::Owned(t), Op::Stack(rows.iter().map(|p| p.0).collect()))
    }

    fn row(&mut self, m: &Var, i: usize) -> Var {
        let y = self.nodes[m.0].value.row(i).to_vec();
        self.push_vec(y, Op::Row(m.0, i))
    }

    fn softmax(&mut self, a: &Var) -> Var {
        let y = ops::softmax(self.data(*a));
        self.push_vec(y, Op::Softmax(a.0))
    }

    fn log_softmax(&mut self, a: &Var) -> Var {
        let y = ops::log_softmax(self.data(*a));
        self.push_vec(y, Op::LogSoftmax(a.0))
    }

    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Var {
        let (y, xhat, inv_std) = ops::layer_norm(self.data(*x), self.data(*gain), self.data(*bias), eps);
        self.push_vec(y, Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, inv_std })
    }

    fn sum(&mut self, parts: &[Var]) -> Var {
        let s = parts.iter().flat_map(|p| self.data(*p)).sum();
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(parts.iter().map(|p| p.0).collect()))
    }

    fn transducer_nll(&mut self, logits: &Var, chunks: usize, targets: &[usize]) -> Result<Var> {
        let grid = loss::AlignmentGrid::from_logits(&self.nodes[logits.0].value, chunks, targets)?;
        let res = loss::forward_backward(&grid)?;
        Ok(self.push(
            Cow::Owned(Tensor::scalar(res.nll)),
            Op::TransducerNll { logits: logits.0, grad: res.grad_logits },
        ))
    }
}
