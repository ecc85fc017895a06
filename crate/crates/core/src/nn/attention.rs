use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use super::LayerNorm;
use crate::ops::Ops;
use crate::{Error, ParamId, ParamStore, Result};

/// Softmax weights of one attention evaluation, one vector per head.
pub type AttentionWeights<V> = Vec<V>;

/// Keys and values of an attention memory, split per head into
/// `[n, d/n_att]` matrices.
#[derive(Debug, Clone)]
pub struct HeadMemory<V> {
    keys: Vec<V>,
    values: Vec<V>,
    len: usize,
    head_dim: usize,
}

impl<V: Clone> HeadMemory<V> {
    /// `keys[i]` and `values[i]` are the full-width projections of item `i`.
    pub fn build<O: Ops<V = V>>(ops: &mut O, keys: &[V], values: &[V], heads: usize) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::EmptyInput);
        }
        let width = ops.value(&keys[0]).len();
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!("width {width} is not divisible by {heads} heads")));
        }
        let head_dim = width / heads;
        let split = |ops: &mut O, items: &[V]| -> Vec<V> {
            (0..heads)
                .map(|h| {
                    let rows: Vec<V> = items.iter().map(|x| ops.slice(x, h * head_dim, head_dim)).collect();
                    ops.stack(&rows)
                })
                .collect()
        };
        let k = split(ops, keys);
        let v = split(ops, values);
        Ok(Self { keys: k, values: v, len: keys.len(), head_dim })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Scaled dot-product attention of a full-width query; returns the
    /// concatenated head outputs and the per-head weights.
    pub fn attend<O: Ops<V = V>>(&self, ops: &mut O, query: &V) -> (V, AttentionWeights<V>) {
        let scale = 1.0 / libm::sqrt(self.head_dim as f64);
        let mut outs = Vec::with_capacity(self.keys.len());
        let mut weights = Vec::with_capacity(self.keys.len());
        for (h, (k, v)) in self.keys.iter().zip(&self.values).enumerate() {
            let q = ops.slice(query, h * self.head_dim, self.head_dim);
            let s = ops.matvec(k, &q);
            let s = ops.scale(&s, scale);
            let a = ops.softmax(&s);
            outs.push(ops.matvec_t(v, &a));
            weights.push(a);
        }
        (ops.concat(&outs), weights)
    }
}

/// Per-frame projections consumed by windowed self-attention.
#[derive(Debug, Clone)]
pub struct Projection<V> {
    pub h: V,
    pub q: V,
    pub k: V,
    pub v: V,
}

/// Local multi-head self-attention over `[t − τ, t + τ]` followed by a
/// residual connection and layer normalization. Per-head projections are
/// stored stacked as `(d, d)` matrices, head `j` owning rows
/// `j·d/n_att .. (j+1)·d/n_att`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub norm: LayerNorm,
    pub dim: usize,
    pub heads: usize,
    pub context: usize,
}

impl SelfAttention {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        context: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("attention width {dim} not divisible by {heads} heads")));
        }
        let bound = 1.0 / libm::sqrt(dim as f64);
        let mut mat = |name: &str, rng: &mut _| store.add(format!("{prefix}.{name}"), super::uniform_tensor(rng, &[dim, dim], bound));
        let query = mat("query", rng)?;
        let key = mat("key", rng)?;
        let value = mat("value", rng)?;
        let norm = LayerNorm::register(store, &format!("{prefix}.norm"), dim)?;
        Ok(Self { query, key, value, norm, dim, heads, context })
    }

    pub fn bind(store: &ParamStore, prefix: &str, dim: usize, heads: usize, context: usize) -> Result<Self> {
        let m = |name: &str| crate::model::bind(store, &format!("{prefix}.{name}"), &[dim, dim]);
        Ok(Self {
            query: m("query")?,
            key: m("key")?,
            value: m("value")?,
            norm: LayerNorm::bind(store, &format!("{prefix}.norm"), dim)?,
            dim,
            heads,
            context,
        })
    }

    /// Frames visible from position `t` in a sequence of `len` frames.
    pub fn window(&self, t: usize, len: usize) -> Range<usize> {
        t.saturating_sub(self.context)..(t + self.context + 1).min(len)
    }

    pub fn project<O: Ops>(&self, ops: &mut O, h: &O::V) -> Result<Projection<O::V>> {
        let n = ops.value(h).len();
        if n != self.dim {
            return Err(Error::Dimension(format!("self-attention width {} given frame of {n}", self.dim)));
        }
        let (wq, wk, wv) = (ops.param(self.query), ops.param(self.key), ops.param(self.value));
        Ok(Projection { q: ops.matvec(&wq, h), k: ops.matvec(&wk, h), v: ops.matvec(&wv, h), h: h.clone() })
    }

    /// Output at the frame `frames[center]`, attending over all of `frames`
    /// (the already clipped window).
    pub fn output_at<O: Ops>(
        &self,
        ops: &mut O,
        frames: &[Projection<O::V>],
        center: usize,
    ) -> Result<(O::V, AttentionWeights<O::V>)> {
        let keys: Vec<O::V> = frames.iter().map(|p| p.k.clone()).collect();
        let values: Vec<O::V> = frames.iter().map(|p| p.v.clone()).collect();
        let mem = HeadMemory::build(ops, &keys, &values, self.heads)?;
        let (c, w) = mem.attend(ops, &frames[center].q);
        let r = ops.add(&c, &frames[center].h);
        Ok((self.norm.apply(ops, &r), w))
    }

    pub fn apply<O: Ops>(&self, ops: &mut O, seq: &[O::V]) -> Result<Vec<O::V>> {
        Ok(self.apply_with_weights(ops, seq)?.into_iter().map(|(o, _)| o).collect())
    }

    pub fn apply_with_weights<O: Ops>(
        &self,
        ops: &mut O,
        seq: &[O::V],
    ) -> Result<Vec<(O::V, AttentionWeights<O::V>)>> {
        let proj = seq.iter().map(|h| self.project(ops, h)).collect::<Result<Vec<_>>>()?;
        (0..seq.len())
            .map(|t| {
                let win = self.window(t, seq.len());
                let center = t - win.start;
                self.output_at(ops, &proj[win], center)
            })
            .collect()
    }
}
