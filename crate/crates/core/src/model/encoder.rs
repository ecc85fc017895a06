use alloc::borrow::Cow;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::ModelConfig;
use crate::nn::{pyramid_subsample, LstmCell, LstmState, SelfAttention};
use crate::nn::Projection;
use crate::ops::{Eval, Ops};
use crate::{Error, ParamStore, Result, Tensor};

/// Pyramidal LSTM stack, plain LSTM stack, then local self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub pyramid: Vec<LstmCell>,
    pub lstm: Vec<LstmCell>,
    pub attention: SelfAttention,
    subsampling: usize,
}

fn layer_dims(cfg: &ModelConfig) -> (Vec<usize>, Vec<usize>) {
    let d = cfg.encoder_dim;
    let pyramid = (0..cfg.pyramid_layers).map(|i| if i == 0 { cfg.feature_dim } else { 2 * d }).collect();
    let first_lstm = if cfg.pyramid_layers == 0 { cfg.feature_dim } else { 2 * d };
    let lstm = (0..cfg.lstm_layers).map(|i| if i == 0 { first_lstm } else { d }).collect();
    (pyramid, lstm)
}

impl Encoder {
    pub fn register(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (pdims, ldims) = layer_dims(cfg);
        let d = cfg.encoder_dim;
        let pyramid = pdims
            .iter()
            .enumerate()
            .map(|(i, &n)| LstmCell::register(store, &format!("encoder.pyramid.{i}"), n, d, rng))
            .collect::<Result<_>>()?;
        let lstm = ldims
            .iter()
            .enumerate()
            .map(|(i, &n)| LstmCell::register(store, &format!("encoder.lstm.{i}"), n, d, rng))
            .collect::<Result<_>>()?;
        let attention = SelfAttention::register(store, "encoder.attention", d, cfg.heads, cfg.context, rng)?;
        Ok(Self { pyramid, lstm, attention, subsampling: cfg.subsampling() })
    }

    pub fn bind(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let (pdims, ldims) = layer_dims(cfg);
        let d = cfg.encoder_dim;
        let pyramid = pdims
            .iter()
            .enumerate()
            .map(|(i, &n)| LstmCell::bind(store, &format!("encoder.pyramid.{i}"), n, d))
            .collect::<Result<_>>()?;
        let lstm = ldims
            .iter()
            .enumerate()
            .map(|(i, &n)| LstmCell::bind(store, &format!("encoder.lstm.{i}"), n, d))
            .collect::<Result<_>>()?;
        let attention = SelfAttention::bind(store, "encoder.attention", d, cfg.heads, cfg.context)?;
        Ok(Self { pyramid, lstm, attention, subsampling: cfg.subsampling() })
    }

    /// Encodes a whole utterance: `T` frames in, `floor-halved^{n_p}(T)` out.
    pub fn forward<O: Ops>(&self, ops: &mut O, frames: &[O::V]) -> Result<Vec<O::V>> {
        let seq = self.recurrent(ops, frames)?;
        self.attention.apply(ops, &seq)
    }

    /// As [`Encoder::forward`], also returning each position's per-head
    /// self-attention weights over its window.
    pub fn forward_with_weights<O: Ops>(&self, ops: &mut O, frames: &[O::V]) -> Result<Vec<(O::V, Vec<O::V>)>> {
        let seq = self.recurrent(ops, frames)?;
        self.attention.apply_with_weights(ops, &seq)
    }

    fn recurrent<O: Ops>(&self, ops: &mut O, frames: &[O::V]) -> Result<Vec<O::V>> {
        if frames.len() < self.subsampling {
            return Err(Error::UtteranceTooShort { frames: frames.len(), required: self.subsampling });
        }
        let mut seq = frames.to_vec();
        for cell in &self.pyramid {
            seq = cell.run(ops, &seq)?;
            seq = pyramid_subsample(ops, &seq)?;
        }
        for cell in &self.lstm {
            seq = cell.run(ops, &seq)?;
        }
        Ok(seq)
    }
}

fn owned(v: Cow<'_, Tensor>) -> Tensor {
    v.into_owned()
}

fn own_state(s: LstmState<Cow<'_, Tensor>>) -> LstmState<Tensor> {
    LstmState { h: owned(s.h), c: owned(s.c) }
}

fn borrow_state(s: &LstmState<Tensor>) -> LstmState<Cow<'_, Tensor>> {
    LstmState { h: Cow::Borrowed(&s.h), c: Cow::Borrowed(&s.c) }
}

/// Frame-synchronous encoder for streaming. Produces exactly the outputs of
/// [`Encoder::forward`], each one as soon as its `τ` future frames exist.
#[derive(Debug, Clone)]
pub struct StreamingEncoder<'m> {
    encoder: &'m Encoder,
    params: &'m ParamStore,
    feature_dim: usize,
    pyramid_states: Vec<LstmState<Tensor>>,
    pending: Vec<Option<Tensor>>,
    lstm_states: Vec<LstmState<Tensor>>,
    frames_in: usize,
    projections: Vec<Projection<Tensor>>,
    /// Absolute index of `projections[0]`.
    first: usize,
    /// Next attention output to emit.
    next: usize,
}

impl<'m> StreamingEncoder<'m> {
    pub fn new(encoder: &'m Encoder, params: &'m ParamStore, feature_dim: usize) -> Self {
        let d = encoder.attention.dim;
        let zero = || LstmState { h: Tensor::zeros(&[d]), c: Tensor::zeros(&[d]) };
        Self {
            encoder,
            params,
            feature_dim,
            pyramid_states: encoder.pyramid.iter().map(|_| zero()).collect(),
            pending: encoder.pyramid.iter().map(|_| None).collect(),
            lstm_states: encoder.lstm.iter().map(|_| zero()).collect(),
            frames_in: 0,
            projections: Vec::new(),
            first: 0,
            next: 0,
        }
    }

    pub fn frames_consumed(&self) -> usize {
        self.frames_in
    }

    /// Feeds one feature frame; returns any encoder outputs that became final.
    pub fn push_frame(&mut self, frame: &[f64]) -> Result<Vec<Tensor>> {
        if frame.len() != self.feature_dim {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.feature_dim, frame.len())));
        }
        self.frames_in += 1;
        let mut x = Tensor::vector(frame.to_vec());
        for (i, cell) in self.encoder.pyramid.iter().enumerate() {
            let mut ops = Eval::new(self.params);
            let s = cell.step(&mut ops, &Cow::Owned(x), &borrow_state(&self.pyramid_states[i]))?;
            let s = own_state(s);
            let h = s.h.clone();
            self.pyramid_states[i] = s;
            match self.pending[i].take() {
                None => {
                    self.pending[i] = Some(h);
                    return Ok(Vec::new());
                }
                Some(prev) => {
                    x = owned(Eval::new(self.params).concat(&[Cow::Owned(prev), Cow::Owned(h)]));
                }
            }
        }
        for (i, cell) in self.encoder.lstm.iter().enumerate() {
            let mut ops = Eval::new(self.params);
            let s = own_state(cell.step(&mut ops, &Cow::Owned(x), &borrow_state(&self.lstm_states[i]))?);
            x = s.h.clone();
            self.lstm_states[i] = s;
        }
        let mut ops = Eval::new(self.params);
        let p = self.encoder.attention.project(&mut ops, &Cow::Owned(x))?;
        self.projections.push(Projection { h: owned(p.h), q: owned(p.q), k: owned(p.k), v: owned(p.v) });
        let available = self.first + self.projections.len();
        let tau = self.encoder.attention.context;
        let mut out = Vec::new();
        while self.next + tau < available {
            out.push(self.emit(available)?);
        }
        Ok(out)
    }

    /// Flushes the outputs still waiting for future context. The caller must
    /// have fed at least `2^{n_p}` frames overall, unless it fed none.
    pub fn finish(&mut self) -> Result<Vec<Tensor>> {
        if self.frames_in == 0 {
            return Ok(Vec::new());
        }
        if self.frames_in < self.encoder.subsampling {
            return Err(Error::UtteranceTooShort { frames: self.frames_in, required: self.encoder.subsampling });
        }
        let total = self.first + self.projections.len();
        let mut out = Vec::new();
        while self.next < total {
            out.push(self.emit(total)?);
        }
        Ok(out)
    }

    fn emit(&mut self, len: usize) -> Result<Tensor> {
        let att = &self.encoder.attention;
        let t = self.next;
        let win = att.window(t, len);
        let local = (win.start - self.first)..(win.end - self.first);
        let frames: Vec<Projection<Cow<'_, Tensor>>> = self.projections[local]
            .iter()
            .map(|p| Projection {
                h: Cow::Borrowed(&p.h),
                q: Cow::Borrowed(&p.q),
                k: Cow::Borrowed(&p.k),
                v: Cow::Borrowed(&p.v),
            })
            .collect();
        let mut ops = Eval::new(self.params);
        let (o, _) = att.output_at(&mut ops, &frames, t - win.start)?;
        let o = owned(o);
        self.next += 1;
        // drop history no future window can reach
        let keep_from = self.next.saturating_sub(att.context);
        if keep_from > self.first {
            self.projections.drain(..keep_from - self.first);
            self.first = keep_from;
        }
        Ok(o)
    }
}
