//! The three transducer components: encoder, prediction network and
//! chunk-wise attention joint network.

mod chunk;
mod config;
mod encoder;
mod joint;
mod predictor;
mod sampling;
mod vocab;

pub use chunk::{chunk_encoder_outputs, chunk_ranges, ChunkedEncoderOutput};
pub use config::{ModelConfig, DECODER_LAYERS};
pub use encoder::{Encoder, StreamingEncoder};
pub use joint::Joint;
pub use predictor::{PredState, Predictor, Prev};
pub use sampling::scheduled_sample;
pub use vocab::{Vocabulary, SOS};

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{HeadMemory, LstmState};
use crate::ops::{Eval, Ops};
use crate::{Error, ParamId, ParamStore, Result, Tensor};

/// Looks up `name` and checks its shape.
pub(crate) fn bind(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store.find(name).ok_or_else(|| Error::Topology(format!("missing parameter {name}")))?;
    let got = store.get(id).shape();
    if got != shape {
        return Err(Error::Topology(format!("parameter {name} has shape {got:?}, expected {shape:?}")));
    }
    Ok(id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    params: ParamStore,
    pub encoder: Encoder,
    pub predictor: Predictor,
    pub joint: Joint,
}

/// Owned prediction-network state used at inference.
pub type InferenceState = PredState<Tensor>;

/// One chunk of encoder output prepared for the joint network.
pub type ChunkMemory<'a> = HeadMemory<Cow<'a, Tensor>>;

impl Model {
    /// Fresh randomly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::register(&mut params, &config, &mut rng)?;
        let predictor = Predictor::register(&mut params, &config, &mut rng)?;
        let joint = Joint::register(&mut params, &config, &mut rng)?;
        Ok(Self { config, params, encoder, predictor, joint })
    }

    /// Binds an existing parameter set; every expected tensor must be
    /// present with the right shape and nothing else may be.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::bind(&params, &config)?;
        let predictor = Predictor::bind(&params, &config)?;
        let joint = Joint::bind(&params, &config)?;
        let reference = Self::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Topology(format!(
                "expected {} parameter tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        Ok(Self { config, params, encoder, predictor, joint })
    }

    /// Same parameters with a different self-attention context `τ`. The
    /// context has no parameters of its own, so this is valid at inference.
    pub fn with_context(mut self, context: usize) -> Result<Self> {
        self.config.context = context;
        self.config.validate()?;
        self.encoder.attention.context = context;
        Ok(self)
    }

    /// Same parameters with a different joint chunk width `w`.
    pub fn with_chunk_width(mut self, width: usize) -> Result<Self> {
        self.config.chunk_width = width;
        self.config.validate()?;
        Ok(self)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    fn check_features(&self, features: &[Vec<f64>]) -> Result<()> {
        if let Some(bad) = features.iter().find(|f| f.len() != self.config.feature_dim) {
            return Err(Error::Dimension(format!(
                "expected {}-dim feature frames, got {}",
                self.config.feature_dim,
                bad.len()
            )));
        }
        Ok(())
    }

    /// Encoder outputs `h_1 … h_{T_enc}` for a whole utterance.
    pub fn encode(&self, features: &[Vec<f64>]) -> Result<Vec<Tensor>> {
        self.check_features(features)?;
        let mut ops = Eval::new(&self.params);
        let frames: Vec<_> = features.iter().map(|f| Cow::Owned(Tensor::vector(f.clone()))).collect();
        Ok(self.encoder.forward(&mut ops, &frames)?.into_iter().map(Cow::into_owned).collect())
    }

    /// Encoder outputs with the per-head self-attention weights of every
    /// position.
    pub fn encode_with_weights(&self, features: &[Vec<f64>]) -> Result<Vec<(Tensor, Vec<Vec<f64>>)>> {
        self.check_features(features)?;
        let mut ops = Eval::new(&self.params);
        let frames: Vec<_> = features.iter().map(|f| Cow::Owned(Tensor::vector(f.clone()))).collect();
        Ok(self
            .encoder
            .forward_with_weights(&mut ops, &frames)?
            .into_iter()
            .map(|(h, w)| (h.into_owned(), w.into_iter().map(|a| a.into_owned().into_data()).collect()))
            .collect())
    }

    pub fn streaming_encoder(&self) -> StreamingEncoder<'_> {
        StreamingEncoder::new(&self.encoder, &self.params, self.config.feature_dim)
    }

    pub fn initial_state(&self) -> InferenceState {
        let d = self.config.decoder_dim;
        PredState {
            layers: (0..DECODER_LAYERS)
                .map(|_| LstmState { h: Tensor::zeros(&[d]), c: Tensor::zeros(&[d]) })
                .collect(),
        }
    }

    /// One prediction-network step at inference.
    pub fn predict_step(&self, prev: Prev, state: &InferenceState) -> Result<(Tensor, InferenceState)> {
        let mut ops = Eval::new(&self.params);
        let borrowed = PredState {
            layers: state
                .layers
                .iter()
                .map(|s| LstmState { h: Cow::Borrowed(&s.h), c: Cow::Borrowed(&s.c) })
                .collect(),
        };
        let (s, next) = self.predictor.step(&mut ops, prev, &borrowed)?;
        let next = PredState {
            layers: next
                .layers
                .into_iter()
                .map(|l| LstmState { h: l.h.into_owned(), c: l.c.into_owned() })
                .collect(),
        };
        Ok((s.into_owned(), next))
    }

    pub fn chunk_memory<'a>(&'a self, chunk: &'a [Tensor]) -> Result<ChunkMemory<'a>> {
        let mut ops = Eval::new(&self.params);
        let frames: Vec<_> = chunk.iter().map(Cow::Borrowed).collect();
        self.joint.memory(&mut ops, &frames)
    }

    /// Joint logits over `Y ∪ {∅}` for a prepared chunk and decoder output.
    pub fn joint_logits(&self, memory: &ChunkMemory<'_>, s: &Tensor) -> Result<Vec<f64>> {
        Ok(self.joint_logits_with_weights(memory, s)?.0)
    }

    /// Joint logits plus the per-head attention weights over the chunk.
    pub fn joint_logits_with_weights(&self, memory: &ChunkMemory<'_>, s: &Tensor) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut ops = Eval::new(&self.params);
        let sv = Cow::Borrowed(s);
        let q = self.joint.query(&mut ops, &sv)?;
        let (z, w) = self.joint.logits(&mut ops, memory, &q, &sv);
        Ok((z.into_owned().into_data(), w.into_iter().map(|a| a.into_owned().into_data()).collect()))
    }

    /// Log-probabilities over `Y ∪ {∅}`.
    pub fn joint_log_probs(&self, memory: &ChunkMemory<'_>, s: &Tensor) -> Result<Vec<f64>> {
        Ok(crate::ops::log_softmax(&self.joint_logits(memory, s)?))
    }

    /// Negative log-likelihood of `targets` for one utterance. `decoder_inputs`
    /// are the labels fed to the prediction network after the start symbol
    /// (the targets themselves, or a scheduled-sampling perturbation of them).
    pub fn utterance_nll<O: Ops>(
        &self,
        ops: &mut O,
        features: &[Vec<f64>],
        targets: &[usize],
        decoder_inputs: &[usize],
    ) -> Result<O::V> {
        Ok(self.utterance_nll_with_grid(ops, features, targets, decoder_inputs)?.0)
    }

    /// As [`Model::utterance_nll`], also returning the grid size `(C, U + 1, |Y| + 1)`.
    pub fn utterance_nll_with_grid<O: Ops>(
        &self,
        ops: &mut O,
        features: &[Vec<f64>],
        targets: &[usize],
        decoder_inputs: &[usize],
    ) -> Result<(O::V, [usize; 3])> {
        self.check_features(features)?;
        if decoder_inputs.len() != targets.len() {
            return Err(Error::Contract("decoder inputs must align with targets".into()));
        }
        let frames: Vec<O::V> = features.iter().map(|f| ops.constant(Tensor::vector(f.clone()))).collect();
        let enc = self.encoder.forward(ops, &frames)?;
        let chunks = chunk_encoder_outputs(&enc, self.config.chunk_width);
        let memories = chunks
            .chunks
            .iter()
            .map(|c| self.joint.memory(ops, c))
            .collect::<Result<Vec<_>>>()?;

        let mut state = PredState::zeros(ops, self.config.decoder_dim);
        let mut decoder_out = Vec::with_capacity(targets.len() + 1);
        let (s0, st) = self.predictor.step(ops, Prev::Start, &state)?;
        decoder_out.push(s0);
        state = st;
        for &y in decoder_inputs {
            let (s, st) = self.predictor.step(ops, Prev::Token(y), &state)?;
            decoder_out.push(s);
            state = st;
        }
        let queries = decoder_out.iter().map(|s| self.joint.query(ops, s)).collect::<Result<Vec<_>>>()?;

        let mut rows = Vec::with_capacity(memories.len() * decoder_out.len());
        for mem in &memories {
            for (q, s) in queries.iter().zip(&decoder_out) {
                rows.push(self.joint.logits(ops, mem, q, s).0);
            }
        }
        let logits = ops.stack(&rows);
        let shape = [memories.len(), targets.len() + 1, self.config.classes()];
        Ok((ops.transducer_nll(&logits, memories.len(), targets)?, shape))
    }
}
