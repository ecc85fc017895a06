use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::ModelConfig;
use crate::nn::{AttentionWeights, HeadMemory};
use crate::ops::Ops;
use crate::{Error, ParamId, ParamStore, Result};

/// Chunk-wise attention joint network. The prediction output `s_u` queries
/// the encoder frames of one chunk; the attended vector and `s_u` are
/// concatenated and projected to `|Y| + 1` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    /// `(d, d_dec)`, heads stacked by rows.
    pub query: ParamId,
    /// `(d, d)`.
    pub key: ParamId,
    /// `(d, d)`.
    pub value: ParamId,
    /// `(|Y| + 1, d + d_dec)`.
    pub out_weight: ParamId,
    pub out_bias: ParamId,
    pub heads: usize,
    encoder_dim: usize,
    decoder_dim: usize,
}

impl Joint {
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (d, dd, k) = (cfg.encoder_dim, cfg.decoder_dim, cfg.classes());
        let ub = |n: usize| 1.0 / libm::sqrt(n as f64);
        let query = store.add("joint.query", crate::nn::uniform_tensor(rng, &[d, dd], ub(dd)))?;
        let key = store.add("joint.key", crate::nn::uniform_tensor(rng, &[d, d], ub(d)))?;
        let value = store.add("joint.value", crate::nn::uniform_tensor(rng, &[d, d], ub(d)))?;
        let out_weight = store.add("joint.out.weight", crate::nn::uniform_tensor(rng, &[k, d + dd], ub(d + dd)))?;
        let out_bias = store.add("joint.out.bias", crate::Tensor::zeros(&[k]))?;
        Ok(Self { query, key, value, out_weight, out_bias, heads: cfg.heads, encoder_dim: d, decoder_dim: dd })
    }

    pub fn bind(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let (d, dd, k) = (cfg.encoder_dim, cfg.decoder_dim, cfg.classes());
        Ok(Self {
            query: super::bind(store, "joint.query", &[d, dd])?,
            key: super::bind(store, "joint.key", &[d, d])?,
            value: super::bind(store, "joint.value", &[d, d])?,
            out_weight: super::bind(store, "joint.out.weight", &[k, d + dd])?,
            out_bias: super::bind(store, "joint.out.bias", &[k])?,
            heads: cfg.heads,
            encoder_dim: d,
            decoder_dim: dd,
        })
    }

    /// Projects one chunk of encoder frames into per-head keys and values.
    pub fn memory<O: Ops>(&self, ops: &mut O, chunk: &[O::V]) -> Result<HeadMemory<O::V>> {
        if chunk.is_empty() {
            return Err(Error::Contract("joint network given an empty chunk".into()));
        }
        if let Some(bad) = chunk.iter().map(|h| ops.value(h).len()).find(|&n| n != self.encoder_dim) {
            return Err(Error::Dimension(format!("joint expects {}-dim frames, got {bad}", self.encoder_dim)));
        }
        let (wk, wv) = (ops.param(self.key), ops.param(self.value));
        let keys: Vec<O::V> = chunk.iter().map(|h| ops.matvec(&wk, h)).collect();
        let values: Vec<O::V> = chunk.iter().map(|h| ops.matvec(&wv, h)).collect();
        HeadMemory::build(ops, &keys, &values, self.heads)
    }

    /// `Q̂ s_u`, shared by every chunk the same `s_u` is scored against.
    pub fn query<O: Ops>(&self, ops: &mut O, s: &O::V) -> Result<O::V> {
        let n = ops.value(s).len();
        if n != self.decoder_dim {
            return Err(Error::Dimension(format!("joint expects {}-dim decoder output, got {n}", self.decoder_dim)));
        }
        let wq = ops.param(self.query);
        Ok(ops.matvec(&wq, s))
    }

    pub fn logits<O: Ops>(
        &self,
        ops: &mut O,
        memory: &HeadMemory<O::V>,
        query: &O::V,
        s: &O::V,
    ) -> (O::V, AttentionWeights<O::V>) {
        let (o, weights) = memory.attend(ops, query);
        let z = ops.concat(&[o, s.clone()]);
        let (w, b) = (ops.param(self.out_weight), ops.param(self.out_bias));
        (ops.affine(&w, &b, &z), weights)
    }
}
