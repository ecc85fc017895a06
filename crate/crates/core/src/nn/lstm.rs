use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::ops::Ops;
use crate::{Error, ParamId, ParamStore, Result, Tensor};

/// LSTM cell. The four gate matrices, each `(hidden, input + hidden)`, are
/// stored stacked as one `(4·hidden, input + hidden)` matrix in the order
/// input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<V> {
    pub h: V,
    pub c: V,
}

impl<V: Clone> LstmState<V> {
    pub fn zeros<O: Ops<V = V>>(ops: &mut O, hidden: usize) -> Self {
        Self { h: ops.constant(Tensor::zeros(&[hidden])), c: ops.constant(Tensor::zeros(&[hidden])) }
    }
}

impl LstmCell {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(format!("{prefix}: LSTM dims must be positive, got {input_dim}x{hidden_dim}")));
        }
        let bound = 1.0 / libm::sqrt(hidden_dim as f64);
        let w = super::uniform_tensor(rng, &[4 * hidden_dim, input_dim + hidden_dim], bound);
        let b = super::uniform_tensor(rng, &[4 * hidden_dim], bound);
        Ok(Self {
            weight: store.add(format!("{prefix}.weight"), w)?,
            bias: store.add(format!("{prefix}.bias"), b)?,
            input_dim,
            hidden_dim,
        })
    }

    /// Looks up an existing cell by name prefix, checking shapes.
    pub fn bind(store: &ParamStore, prefix: &str, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        let weight = crate::model::bind(store, &format!("{prefix}.weight"), &[4 * hidden_dim, input_dim + hidden_dim])?;
        let bias = crate::model::bind(store, &format!("{prefix}.bias"), &[4 * hidden_dim])?;
        Ok(Self { weight, bias, input_dim, hidden_dim })
    }

    /// One recurrence step; returns the new state, whose `h` is the output.
    pub fn step<O: Ops>(&self, ops: &mut O, x: &O::V, state: &LstmState<O::V>) -> Result<LstmState<O::V>> {
        let (xl, hl, cl) = (ops.value(x).len(), ops.value(&state.h).len(), ops.value(&state.c).len());
        if xl != self.input_dim || hl != self.hidden_dim || cl != self.hidden_dim {
            return Err(Error::Dimension(format!(
                "LSTM {}->{} given input {xl}, state ({hl}, {cl})",
                self.input_dim, self.hidden_dim
            )));
        }
        let d = self.hidden_dim;
        let w = ops.param(self.weight);
        let b = ops.param(self.bias);
        let xh = ops.concat(&[x.clone(), state.h.clone()]);
        let z = ops.affine(&w, &b, &xh);
        let zi = ops.slice(&z, 0, d);
        let zf = ops.slice(&z, d, d);
        let zg = ops.slice(&z, 2 * d, d);
        let zo = ops.slice(&z, 3 * d, d);
        let i = ops.sigmoid(&zi);
        let f = ops.sigmoid(&zf);
        let g = ops.tanh(&zg);
        let o = ops.sigmoid(&zo);
        let fc = ops.mul(&f, &state.c);
        let ig = ops.mul(&i, &g);
        let c = ops.add(&fc, &ig);
        let tc = ops.tanh(&c);
        let h = ops.mul(&o, &tc);
        Ok(LstmState { h, c })
    }

    /// Runs the cell over a sequence from a zero state.
    pub fn run<O: Ops>(&self, ops: &mut O, seq: &[O::V]) -> Result<Vec<O::V>> {
        let mut state = LstmState::zeros(ops, self.hidden_dim);
        let mut out = Vec::with_capacity(seq.len());
        for x in seq {
            state = self.step(ops, x, &state)?;
            out.push(state.h.clone());
        }
        Ok(out)
    }
}

/// Concatenates adjacent pairs: `out[i] = seq[2i] ‖ seq[2i+1]`. An odd
/// trailing frame is dropped.
pub fn pyramid_subsample<O: Ops>(ops: &mut O, seq: &[O::V]) -> Result<Vec<O::V>> {
    if seq.len() < 2 {
        return Err(Error::UtteranceTooShort { frames: seq.len(), required: 2 });
    }
    Ok(seq.chunks_exact(2).map(|p| ops.concat(p)).collect())
}
