//! Streaming recognition over fixed-duration audio chunks.

use alloc::vec::Vec;

use crate::decode::{beam_search_chunk, Beam, Clock, SearchConfig};
use crate::model::{Model, StreamingEncoder};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    /// Feature frame step in milliseconds.
    pub frame_step_ms: f64,
    /// Feature frames per audio chunk.
    pub chunk_frames: usize,
    pub search: SearchConfig,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { frame_step_ms: 10.0, chunk_frames: 10, search: SearchConfig::new(4) }
    }
}

impl StreamConfig {
    pub fn chunk_ms(&self) -> f64 {
        self.chunk_frames as f64 * self.frame_step_ms
    }

    fn validate(&self) -> Result<()> {
        if self.chunk_frames == 0 || !(self.frame_step_ms > 0.0) {
            return Err(Error::Config("stream chunks need a positive duration".into()));
        }
        if self.search.beam == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Timing for one processed audio chunk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkMetrics {
    pub audio_ms: f64,
    pub processing_ms: f64,
    /// Algorithmic delay from the encoder's right context.
    pub lookahead_ms: f64,
}

/// Mean real-time factor and mean latency (processing plus lookahead).
pub fn compute_rtf_latency(metrics: &[ChunkMetrics]) -> Result<(f64, f64)> {
    if metrics.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = metrics.len() as f64;
    let rtf = metrics.iter().map(|m| m.processing_ms / m.audio_ms).sum::<f64>() / n;
    let latency = metrics.iter().map(|m| m.processing_ms + m.lookahead_ms).sum::<f64>() / n;
    Ok((rtf, latency))
}

/// Partial hypothesis after a chunk.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partial {
    /// Prefix shared by the whole beam; never retracted.
    pub stable: Vec<usize>,
    /// Current best hypothesis; may be revised.
    pub best: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub chunks: Vec<ChunkMetrics>,
}

impl StreamOutput {
    /// `None` when no audio was processed.
    pub fn rtf_latency(&self) -> Option<(f64, f64)> {
        compute_rtf_latency(&self.chunks).ok()
    }
}

/// Frame-driven decoder: runs the streaming encoder and advances the beam
/// each time `w` encoder outputs are available.
#[derive(Debug, Clone)]
pub struct StreamDecoder<'m> {
    model: &'m Model,
    encoder: StreamingEncoder<'m>,
    search: SearchConfig,
    ready: Vec<Tensor>,
    beam: Beam,
    chunks_decoded: usize,
}

impl<'m> StreamDecoder<'m> {
    pub fn new(model: &'m Model, search: SearchConfig) -> Result<Self> {
        Ok(Self {
            model,
            encoder: model.streaming_encoder(),
            search,
            ready: Vec::new(),
            beam: Beam::initial(model)?,
            chunks_decoded: 0,
        })
    }

    pub fn beam(&self) -> &Beam {
        &self.beam
    }

    pub fn chunks_decoded(&self) -> usize {
        self.chunks_decoded
    }

    /// Returns true if at least one joint chunk was decoded.
    pub fn push_frame(&mut self, frame: &[f64]) -> Result<bool> {
        let out = self.encoder.push_frame(frame)?;
        self.ready.extend(out);
        let w = self.model.config.chunk_width;
        let mut advanced = false;
        while self.ready.len() >= w {
            let rest = self.ready.split_off(w);
            let chunk = core::mem::replace(&mut self.ready, rest);
            self.decode_chunk(&chunk)?;
            advanced = true;
        }
        Ok(advanced)
    }

    /// Flushes the encoder and decodes any trailing partial chunk.
    pub fn finish(&mut self) -> Result<()> {
        let out = self.encoder.finish()?;
        self.ready.extend(out);
        let w = self.model.config.chunk_width;
        while !self.ready.is_empty() {
            let take = w.min(self.ready.len());
            let rest = self.ready.split_off(take);
            let chunk = core::mem::replace(&mut self.ready, rest);
            self.decode_chunk(&chunk)?;
        }
        Ok(())
    }

    fn decode_chunk(&mut self, chunk: &[Tensor]) -> Result<()> {
        let mem = self.model.chunk_memory(chunk)?;
        self.beam = beam_search_chunk(self.model, &self.beam, &mem, self.search)?;
        self.chunks_decoded += 1;
        Ok(())
    }

    pub fn partial(&self) -> Partial {
        Partial { stable: self.beam.common_prefix().to_vec(), best: self.beam.best().tokens.clone() }
    }
}

/// Buffers pushed feature frames into fixed-duration audio chunks and times
/// the work done for each.
pub struct StreamSession<'m, C: Clock> {
    decoder: StreamDecoder<'m>,
    config: StreamConfig,
    clock: C,
    buffer: Vec<Vec<f64>>,
    metrics: Vec<ChunkMetrics>,
    lookahead_ms: f64,
    finalized: bool,
}

impl<'m, C: Clock> StreamSession<'m, C> {
    pub fn new(model: &'m Model, config: StreamConfig, clock: C) -> Result<Self> {
        config.validate()?;
        let cfg = &model.config;
        let lookahead_ms = (cfg.context * cfg.subsampling()) as f64 * config.frame_step_ms;
        Ok(Self {
            decoder: StreamDecoder::new(model, config.search)?,
            config,
            clock,
            buffer: Vec::new(),
            metrics: Vec::new(),
            lookahead_ms,
            finalized: false,
        })
    }

    pub fn lookahead_ms(&self) -> f64 {
        self.lookahead_ms
    }

    /// Appends frames and processes every complete audio chunk. Returns the
    /// partial transcript if any joint chunk was decoded.
    pub fn push_features(&mut self, frames: &[Vec<f64>]) -> Result<Option<Partial>> {
        if self.finalized {
            return Err(Error::Finalized);
        }
        let dim = self.decoder.model.config.feature_dim;
        if let Some(bad) = frames.iter().find(|f| f.len() != dim) {
            return Err(Error::Dimension(alloc::format!("expected {dim} features, got {}", bad.len())));
        }
        self.buffer.extend_from_slice(frames);
        let n = self.config.chunk_frames;
        let mut advanced = false;
        while self.buffer.len() >= n {
            let rest = self.buffer.split_off(n);
            let chunk = core::mem::replace(&mut self.buffer, rest);
            advanced |= self.process(&chunk)?;
        }
        Ok(advanced.then(|| self.decoder.partial()))
    }

    fn process(&mut self, frames: &[Vec<f64>]) -> Result<bool> {
        let t0 = self.clock.now_ms();
        let mut advanced = false;
        for f in frames {
            advanced |= self.decoder.push_frame(f)?;
        }
        let processing_ms = self.clock.now_ms() - t0;
        self.metrics.push(ChunkMetrics {
            audio_ms: frames.len() as f64 * self.config.frame_step_ms,
            processing_ms,
            lookahead_ms: self.lookahead_ms,
        });
        Ok(advanced)
    }

    /// Processes the remaining audio, flushes the decoder and returns the
    /// best transcript with per-chunk metrics. A session that received no
    /// audio yields an empty transcript and no metrics.
    pub fn finalize(&mut self) -> Result<StreamOutput> {
        if self.finalized {
            return Err(Error::Finalized);
        }
        self.finalized = true;
        let tail = core::mem::take(&mut self.buffer);
        let t0 = self.clock.now_ms();
        for f in &tail {
            self.decoder.push_frame(f)?;
        }
        self.decoder.finish()?;
        if !tail.is_empty() {
            let processing_ms = self.clock.now_ms() - t0;
            self.metrics.push(ChunkMetrics {
                audio_ms: tail.len() as f64 * self.config.frame_step_ms,
                processing_ms,
                lookahead_ms: self.lookahead_ms,
            });
        }
        let best = self.decoder.beam().best();
        Ok(StreamOutput { tokens: best.tokens.clone(), log_prob: best.log_prob, chunks: core::mem::take(&mut self.metrics) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{decode_utterance, NoClock};
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
            context: 2,
            chunk_width: 3,
            vocab_size: 3,
            ..Default::default()
        };
        Model::new(cfg, 9).unwrap()
    }

    fn features(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    struct Ticker(f64);
    impl Clock for Ticker {
        fn now_ms(&mut self) -> f64 {
            self.0 += 1.0;
            self.0
        }
    }

    #[test]
    fn streaming_encoder_matches_offline() {
        let model = tiny();
        for n in [4, 5, 17, 40, 63] {
            let f = features(n, n as u64);
            let offline = model.encode(&f).unwrap();
            let mut enc = model.streaming_encoder();
            let mut online = Vec::new();
            for frame in &f {
                online.extend(enc.push_frame(frame).unwrap());
            }
            online.extend(enc.finish().unwrap());
            assert_eq!(offline, online, "T = {n}");
        }
    }

    #[test]
    fn streaming_matches_offline_decode() {
        let model = tiny();
        let f = features(95, 7);
        let search = SearchConfig::new(3);
        let offline = decode_utterance(&model, &f, search, &mut NoClock).unwrap();
        let mut s = StreamSession::new(&model, StreamConfig { search, ..Default::default() }, NoClock).unwrap();
        for part in f.chunks(7) {
            s.push_features(part).unwrap();
        }
        let out = s.finalize().unwrap();
        assert_eq!(out.tokens, offline.tokens);
        assert_eq!(out.log_prob, offline.log_prob);
    }

    #[test]
    fn partition_of_pushes_does_not_matter() {
        let model = tiny();
        let f = features(81, 3);
        let run = |sizes: &[usize]| {
            let mut s = StreamSession::new(&model, StreamConfig::default(), NoClock).unwrap();
            let mut at = 0;
            let mut i = 0;
            while at < f.len() {
                let n = sizes[i % sizes.len()].min(f.len() - at);
                s.push_features(&f[at..at + n]).unwrap();
                at += n;
                i += 1;
            }
            s.finalize().unwrap().tokens
        };
        let whole = run(&[81]);
        assert_eq!(run(&[1]), whole);
        assert_eq!(run(&[3, 11, 2]), whole);
    }

    #[test]
    fn early_pushes_are_silent_and_partials_are_monotone() {
        let model = tiny();
        let mut s = StreamSession::new(&model, StreamConfig::default(), NoClock).unwrap();
        let f = features(200, 1);
        assert_eq!(s.push_features(&f[..9]).unwrap(), None);
        let mut stable = Vec::new();
        for part in f[9..].chunks(10) {
            if let Some(p) = s.push_features(part).unwrap() {
                assert!(p.stable.starts_with(&stable));
                assert!(p.best.starts_with(&p.stable));
                stable = p.stable;
            }
        }
        let out = s.finalize().unwrap();
        assert!(out.tokens.starts_with(&stable));
    }

    #[test]
    fn lifecycle_errors_and_empty_session() {
        let model = tiny();
        let mut s = StreamSession::new(&model, StreamConfig::default(), NoClock).unwrap();
        let out = s.finalize().unwrap();
        assert!(out.tokens.is_empty() && out.chunks.is_empty());
        assert_eq!(out.rtf_latency(), None);
        assert!(matches!(s.finalize(), Err(Error::Finalized)));
        assert!(matches!(s.push_features(&features(3, 0)), Err(Error::Finalized)));
        let mut s = StreamSession::new(&model, StreamConfig::default(), NoClock).unwrap();
        assert!(s.push_features(&[alloc::vec![0.0; 5]]).is_err());
    }

    #[test]
    fn metrics_account_for_every_chunk() {
        let model = tiny();
        let mut s = StreamSession::new(&model, StreamConfig::default(), Ticker(0.0)).unwrap();
        assert_eq!(s.lookahead_ms(), 2.0 * 4.0 * 10.0);
        s.push_features(&features(45, 2)).unwrap();
        let out = s.finalize().unwrap();
        assert_eq!(out.chunks.len(), 5);
        assert_eq!(out.chunks[4].audio_ms, 50.0);
        assert!(out.chunks.iter().all(|c| c.processing_ms == 1.0));
        let (rtf, lat) = out.rtf_latency().unwrap();
        assert!((rtf - (4.0 / 100.0 + 1.0 / 50.0) / 5.0).abs() < 1e-12);
        assert_eq!(lat, 81.0);
    }

    #[test]
    fn rtf_latency_arithmetic() {
        assert!(compute_rtf_latency(&[]).is_err());
        let m = [
            ChunkMetrics { audio_ms: 100.0, processing_ms: 10.0, lookahead_ms: 80.0 },
            ChunkMetrics { audio_ms: 100.0, processing_ms: 30.0, lookahead_ms: 80.0 },
        ];
        let (rtf, lat) = compute_rtf_latency(&m).unwrap();
        assert!((rtf - 0.2).abs() < 1e-15);
        assert!((lat - 100.0).abs() < 1e-12);
    }
}
