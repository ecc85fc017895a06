use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{ModelConfig, DECODER_LAYERS};
use crate::nn::{LstmCell, LstmState};
use crate::ops::Ops;
use crate::{Error, ParamId, ParamStore, Result};

/// Input to one prediction-network step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prev {
    /// The start symbol; embedded with the (otherwise unused) blank row.
    Start,
    Token(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredState<V> {
    pub layers: Vec<LstmState<V>>,
}

impl<V: Clone> PredState<V> {
    pub fn zeros<O: Ops<V = V>>(ops: &mut O, dim: usize) -> Self {
        Self { layers: (0..DECODER_LAYERS).map(|_| LstmState::zeros(ops, dim)).collect() }
    }
}

/// Token embedding followed by two LSTM layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub embedding: ParamId,
    pub layers: Vec<LstmCell>,
    pub dim: usize,
    vocab_size: usize,
}

impl Predictor {
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = cfg.decoder_dim;
        let emb = crate::nn::uniform_tensor(rng, &[cfg.classes(), d], 1.0);
        let embedding = store.add("predictor.embedding", emb)?;
        let layers = (0..DECODER_LAYERS)
            .map(|i| LstmCell::register(store, &format!("predictor.lstm.{i}"), d, d, rng))
            .collect::<Result<_>>()?;
        Ok(Self { embedding, layers, dim: d, vocab_size: cfg.vocab_size })
    }

    pub fn bind(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.decoder_dim;
        let embedding = super::bind(store, "predictor.embedding", &[cfg.classes(), d])?;
        let layers = (0..DECODER_LAYERS)
            .map(|i| LstmCell::bind(store, &format!("predictor.lstm.{i}"), d, d))
            .collect::<Result<_>>()?;
        Ok(Self { embedding, layers, dim: d, vocab_size: cfg.vocab_size })
    }

    /// Returns `s_u` and the advanced state. Blank is never a valid input.
    pub fn step<O: Ops>(&self, ops: &mut O, prev: Prev, state: &PredState<O::V>) -> Result<(O::V, PredState<O::V>)> {
        let row = match prev {
            Prev::Start => 0,
            Prev::Token(0) => return Err(Error::Contract("blank fed to the prediction network".into())),
            Prev::Token(k) if k > self.vocab_size => {
                return Err(Error::Contract(format!("token {k} outside vocabulary of {}", self.vocab_size)))
            }
            Prev::Token(k) => k,
        };
        if state.layers.len() != self.layers.len() {
            return Err(Error::Dimension(format!("prediction state has {} layers", state.layers.len())));
        }
        let table = ops.param(self.embedding);
        let mut x = ops.row(&table, row);
        let mut next = Vec::with_capacity(self.layers.len());
        for (cell, s) in self.layers.iter().zip(&state.layers) {
            let ns = cell.step(ops, &x, s)?;
            x = ns.h.clone();
            next.push(ns);
        }
        Ok((x, PredState { layers: next }))
    }
}
