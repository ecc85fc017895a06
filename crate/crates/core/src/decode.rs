//! Chunk-synchronous decoding.
//!
//! Beam search advances one encoder chunk at a time. Inside a chunk a
//! hypothesis either emits a unit (advancing the prediction network) or
//! emits blank, which finalizes it for the chunk. Each round scores every
//! extension of the live hypotheses and keeps the `B` best candidates
//! overall, finalized or not; the chunk ends once no live hypothesis
//! survives. Prefix probabilities are not summed over `pref(y)`; only exact
//! duplicate finalized prefixes are merged by log-add.

use alloc::vec::Vec;

use crate::math::{self, log_add};
use crate::model::{chunk_encoder_outputs, ChunkMemory, InferenceState, Model, Prev};
use crate::{Error, Result, Tensor};

/// Emission cap per hypothesis per chunk.
pub const DEFAULT_MAX_EMISSIONS: usize = 8;

/// Monotonic time source in milliseconds.
pub trait Clock {
    fn now_ms(&mut self) -> f64;
}

/// Clock that always reads zero, for callers that do not time decoding.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    pub beam: usize,
    pub max_emissions: usize,
}

impl SearchConfig {
    pub fn new(beam: usize) -> Self {
        Self { beam, max_emissions: DEFAULT_MAX_EMISSIONS }
    }

    fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: InferenceState,
    /// Prediction-network output for the current prefix.
    pub decoder_out: Tensor,
}

/// Up to `B` hypotheses with distinct prefixes, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    hyps: Vec<Hypothesis>,
}

impl Beam {
    /// Empty prefix, start-symbol state, log-probability 0.
    pub fn initial(model: &Model) -> Result<Self> {
        let (s, state) = model.predict_step(Prev::Start, &model.initial_state())?;
        Ok(Self { hyps: alloc::vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, state, decoder_out: s }] })
    }

    pub fn best(&self) -> &Hypothesis {
        &self.hyps[0]
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hyps
    }

    pub fn len(&self) -> usize {
        self.hyps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyps.is_empty()
    }

    /// Longest prefix shared by every hypothesis. Every later beam extends
    /// some current hypothesis, so this only ever grows.
    pub fn common_prefix(&self) -> &[usize] {
        let first = &self.hyps[0].tokens;
        let n = self.hyps[1..].iter().fold(first.len(), |n, h| {
            first.iter().zip(&h.tokens).take(n).take_while(|(a, b)| a == b).count()
        });
        &first[..n]
    }
}

enum Candidate {
    /// Index into `finalized`.
    Final(usize),
    /// Parent index into `live`, emitted unit.
    Emit(usize, usize),
}

/// Advances `beam` over one chunk of encoder output.
pub fn beam_search_chunk(model: &Model, beam: &Beam, memory: &ChunkMemory<'_>, cfg: SearchConfig) -> Result<Beam> {
    cfg.validate()?;
    if beam.is_empty() {
        return Err(Error::Contract("beam search needs a non-empty beam".into()));
    }
    let mut live: Vec<Hypothesis> = beam.hyps.clone();
    let mut finalized: Vec<Hypothesis> = Vec::new();

    for round in 0..=cfg.max_emissions {
        if live.is_empty() {
            break;
        }
        let mut scored: Vec<(f64, Candidate)> = finalized.iter().enumerate().map(|(i, h)| (h.log_prob, Candidate::Final(i))).collect();
        let mut new_final: Vec<Hypothesis> = Vec::new();
        let mut emits: Vec<(f64, Candidate)> = Vec::new();
        for (p, hyp) in live.iter().enumerate() {
            let lp = model.joint_log_probs(memory, &hyp.decoder_out)?;
            let closing = hyp.log_prob + lp[0];
            match finalized.iter_mut().chain(new_final.iter_mut()).find(|f| f.tokens == hyp.tokens) {
                Some(f) => f.log_prob = log_add(f.log_prob, closing),
                None => new_final.push(Hypothesis { log_prob: closing, ..hyp.clone() }),
            }
            if round < cfg.max_emissions {
                let mut units: Vec<(f64, usize)> = (1..lp.len()).map(|k| (hyp.log_prob + lp[k], k)).collect();
                units.sort_by(|a, b| b.0.total_cmp(&a.0));
                units.truncate(cfg.beam);
                emits.extend(units.into_iter().map(|(s, k)| (s, Candidate::Emit(p, k))));
            }
        }
        // finals (including ones merged this round) precede emissions so that
        // ties resolve to blank, as argmax does
        for (i, f) in finalized.iter().enumerate() {
            scored[i].0 = f.log_prob;
        }
        let base = finalized.len();
        scored.extend(new_final.iter().enumerate().map(|(i, h)| (h.log_prob, Candidate::Final(base + i))));
        finalized.extend(new_final);
        scored.extend(emits);
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored.truncate(cfg.beam);

        let mut kept_final = Vec::new();
        let mut next_live = Vec::new();
        for (score, cand) in scored {
            match cand {
                Candidate::Final(i) => kept_final.push(i),
                Candidate::Emit(p, k) => {
                    let parent = &live[p];
                    let (s, state) = model.predict_step(Prev::Token(k), &parent.state)?;
                    let mut tokens = parent.tokens.clone();
                    tokens.push(k);
                    next_live.push(Hypothesis { tokens, log_prob: score, state, decoder_out: s });
                }
            }
        }
        let mut pool: Vec<Option<Hypothesis>> = finalized.drain(..).map(Some).collect();
        finalized = kept_final.into_iter().filter_map(|i| pool[i].take()).collect();
        live = next_live;
    }

    finalized.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
    finalized.truncate(cfg.beam);
    Ok(Beam { hyps: finalized })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Wall-clock milliseconds spent on each joint chunk.
    pub chunk_ms: Vec<f64>,
}

/// Encodes, chunks and folds [`beam_search_chunk`] over the chunks.
pub fn decode_utterance(
    model: &Model,
    features: &[Vec<f64>],
    cfg: SearchConfig,
    clock: &mut impl Clock,
) -> Result<DecodeResult> {
    cfg.validate()?;
    let enc = model.encode(features)?;
    let chunks = chunk_encoder_outputs(&enc, model.config.chunk_width);
    let mut beam = Beam::initial(model)?;
    let mut chunk_ms = Vec::with_capacity(chunks.len());
    for chunk in &chunks.chunks {
        let t0 = clock.now_ms();
        let mem = model.chunk_memory(chunk)?;
        beam = beam_search_chunk(model, &beam, &mem, cfg)?;
        chunk_ms.push(clock.now_ms() - t0);
    }
    let best = beam.best();
    Ok(DecodeResult { tokens: best.tokens.clone(), log_prob: best.log_prob, chunk_ms })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Prediction-network steps taken, excluding the start symbol.
    pub predictor_steps: usize,
}

/// Per chunk, repeatedly takes the argmax of the joint distribution until it
/// is blank or `max_emissions` units have been emitted.
pub fn greedy_decode(model: &Model, features: &[Vec<f64>], max_emissions: usize) -> Result<GreedyResult> {
    let enc = model.encode(features)?;
    let chunks = chunk_encoder_outputs(&enc, model.config.chunk_width);
    let (mut s, mut state) = model.predict_step(Prev::Start, &model.initial_state())?;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut steps = 0;
    for chunk in &chunks.chunks {
        let mem = model.chunk_memory(chunk)?;
        let mut emitted = 0;
        loop {
            let lp = model.joint_log_probs(&mem, &s)?;
            let k = math::argmax(&lp);
            if k == 0 || emitted == max_emissions {
                log_prob += lp[0];
                break;
            }
            log_prob += lp[k];
            tokens.push(k);
            (s, state) = model.predict_step(Prev::Token(k), &state)?;
            emitted += 1;
            steps += 1;
        }
    }
    Ok(GreedyResult { tokens, log_prob, predictor_steps: steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            feature_dim: 4,
            pyramid_layers: 2,
            lstm_layers: 1,
            encoder_dim: 8,
            decoder_dim: 8,
            heads: 2,
            context: 1,
            chunk_width: 2,
            vocab_size: 3,
            ..Default::default()
        };
        Model::new(cfg, 5).unwrap()
    }

    fn features(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    /// Biases the joint output towards one class by a large margin.
    fn force_class(model: &mut Model, class: usize) {
        let b = model.joint.out_bias;
        let w = model.joint.out_weight;
        model.params_mut().get_mut(w).data_mut().fill(0.0);
        let bias = model.params_mut().get_mut(b).data_mut();
        bias.fill(-50.0);
        bias[class] = 50.0;
    }

    #[test]
    fn beam_of_one_is_greedy() {
        let model = tiny();
        for seed in 0..20 {
            let f = features(40, 4, seed);
            let g = greedy_decode(&model, &f, DEFAULT_MAX_EMISSIONS).unwrap();
            let b = decode_utterance(&model, &f, SearchConfig::new(1), &mut NoClock).unwrap();
            assert_eq!(g.tokens, b.tokens);
            assert_eq!(g.log_prob, b.log_prob);
        }
    }

    #[test]
    fn blank_everywhere_gives_empty_transcript() {
        let mut model = tiny();
        force_class(&mut model, 0);
        let f = features(40, 4, 1);
        let r = decode_utterance(&model, &f, SearchConfig::new(4), &mut NoClock).unwrap();
        assert!(r.tokens.is_empty());
        assert!(r.log_prob <= 0.0 && r.log_prob > -1e-6);
        assert_eq!(r.chunk_ms.len(), model.config.chunks_for(40));
    }

    #[test]
    fn emission_cap_bounds_output() {
        let mut model = tiny();
        force_class(&mut model, 2);
        let f = features(40, 4, 2);
        let chunks = model.config.chunks_for(40);
        let g = greedy_decode(&model, &f, 3).unwrap();
        assert_eq!(g.tokens.len(), 3 * chunks);
        assert!(g.predictor_steps <= 3 * chunks);
        let b = decode_utterance(&model, &f, SearchConfig { beam: 4, max_emissions: 3 }, &mut NoClock).unwrap();
        assert!(b.tokens.len() <= 3 * chunks);
    }

    #[test]
    fn greedy_is_deterministic() {
        let model = tiny();
        let f = features(33, 4, 3);
        assert_eq!(greedy_decode(&model, &f, 8).unwrap(), greedy_decode(&model, &f, 8).unwrap());
    }

    #[test]
    fn beam_invariants_hold_per_chunk() {
        let model = tiny();
        let f = features(48, 4, 4);
        let enc = model.encode(&f).unwrap();
        let mut beam = Beam::initial(&model).unwrap();
        let mut stable: Vec<usize> = Vec::new();
        for chunk in chunk_encoder_outputs(&enc, 2).chunks {
            let mem = model.chunk_memory(&chunk).unwrap();
            beam = beam_search_chunk(&model, &beam, &mem, SearchConfig::new(4)).unwrap();
            assert!(beam.len() <= 4);
            for (i, h) in beam.hypotheses().iter().enumerate() {
                assert!(h.log_prob <= 0.0);
                assert!(!h.tokens.contains(&0));
                assert!(beam.hypotheses()[..i].iter().all(|o| o.tokens != h.tokens));
            }
            let cp = beam.common_prefix().to_vec();
            assert!(cp.starts_with(&stable));
            stable = cp;
        }
    }

    #[test]
    fn rejects_zero_beam_and_short_input() {
        let model = tiny();
        assert!(decode_utterance(&model, &features(40, 4, 0), SearchConfig::new(0), &mut NoClock).is_err());
        assert!(matches!(
            decode_utterance(&model, &features(3, 4, 0), SearchConfig::new(2), &mut NoClock),
            Err(Error::UtteranceTooShort { .. })
        ));
    }
}
