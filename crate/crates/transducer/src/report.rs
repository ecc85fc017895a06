//! Evaluation, streaming benchmark and error-breakdown reports.

use std::fmt::Write as _;
use std::time::Instant;

use attn_transducer_core::decode::{decode_utterance, greedy_decode, Clock, NoClock, SearchConfig, DEFAULT_MAX_EMISSIONS};
use attn_transducer_core::metrics::{edit_counts, EditCounts};
use attn_transducer_core::model::{Model, Vocabulary};
use attn_transducer_core::stream::{compute_rtf_latency, StreamConfig, StreamSession};
use rayon::prelude::*;

use crate::{Error, Result};

/// Wall clock based on [`Instant`].
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&mut self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }
}

/// Decodes with beam search, or greedily when `beam` is `None`.
pub fn transcribe(model: &Model, features: &[Vec<f64>], beam: Option<usize>) -> Result<Vec<usize>> {
    Ok(match beam {
        None => greedy_decode(model, features, DEFAULT_MAX_EMISSIONS)?.tokens,
        Some(b) => decode_utterance(model, features, SearchConfig::new(b), &mut NoClock)?.tokens,
    })
}

/// Transcribes every utterance in parallel, in input order.
pub fn transcribe_all(model: &Model, inputs: &[&[Vec<f64>]], beam: Option<usize>) -> Result<Vec<Vec<usize>>> {
    inputs.par_iter().map(|f| transcribe(model, f, beam)).collect()
}

/// Corpus-level edit counts of `model` on `(features, reference)` pairs.
pub fn evaluate(model: &Model, data: &[(&[Vec<f64>], &[usize])], beam: Option<usize>) -> Result<EditCounts> {
    let inputs: Vec<_> = data.iter().map(|(f, _)| *f).collect();
    let hyps = transcribe_all(model, &inputs, beam)?;
    Ok(hyps.iter().zip(data).map(|(h, (_, r))| edit_counts(h, r)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub id: String,
    pub audio_ms: f64,
    pub rtf: f64,
    pub latency_ms: f64,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub lookahead_ms: f64,
    pub rows: Vec<BenchRow>,
}

pub const BENCH_COLUMNS: [&str; 5] = ["id", "audio_ms", "rtf", "latency_ms", "transcript"];

impl BenchReport {
    pub fn mean_rtf(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.rtf))
    }

    pub fn mean_latency_ms(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.latency_ms))
    }

    /// Tab-separated table: a comment line with the lookahead, a header and
    /// one row per utterance. RTF and latency average over every chunk,
    /// including the first.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# lookahead_ms={}\n{}\n", self.lookahead_ms, BENCH_COLUMNS.join("\t"));
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.1}\t{:.6}\t{:.3}\t{}", r.id, r.audio_ms, r.rtf, r.latency_ms, r.transcript);
        }
        s
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("benchmark report: {m}"));
        let mut lines = text.lines();
        let lookahead_ms = lines
            .next()
            .and_then(|l| l.strip_prefix("# lookahead_ms="))
            .ok_or_else(|| bad("missing lookahead line".into()))?
            .parse::<f64>()
            .map_err(|e| bad(e.to_string()))?;
        if lines.next() != Some(&BENCH_COLUMNS.join("\t")) {
            return Err(bad("unexpected header".into()));
        }
        let mut rows = Vec::new();
        for l in lines {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != BENCH_COLUMNS.len() {
                return Err(bad(format!("row {l:?} has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            let row = BenchRow { id: f[0].into(), audio_ms: num(f[1])?, rtf: num(f[2])?, latency_ms: num(f[3])?, transcript: f[4].into() };
            if !(row.audio_ms > 0.0 && row.rtf >= 0.0 && row.latency_ms >= lookahead_ms) {
                return Err(bad(format!("row {l:?} is out of range")));
            }
            rows.push(row);
        }
        Ok(Self { lookahead_ms, rows })
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Streams each utterance through a fresh session, one audio chunk per push,
/// timing with the monotonic clock. Utterances run one after another so the
/// timings are not disturbed by each other.
pub fn stream_benchmark(
    model: &Model,
    utterances: &[(String, Vec<Vec<f64>>)],
    config: StreamConfig,
    vocab: &Vocabulary,
) -> Result<BenchReport> {
    let mut rows = Vec::with_capacity(utterances.len());
    let mut lookahead_ms = 0.0;
    for (id, features) in utterances {
        let mut session = StreamSession::new(model, config, MonotonicClock::default())?;
        lookahead_ms = session.lookahead_ms();
        for part in features.chunks(config.chunk_frames) {
            session.push_features(part)?;
        }
        let out = session.finalize()?;
        let Some(_) = out.rtf_latency() else { continue };
        let (rtf, latency_ms) = compute_rtf_latency(&out.chunks)?;
        let audio_ms = out.chunks.iter().map(|c| c.audio_ms).sum();
        rows.push(BenchRow { id: id.clone(), audio_ms, rtf, latency_ms, transcript: vocab.decode(&out.tokens)?.join(" ") });
    }
    Ok(BenchReport { lookahead_ms, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    pub name: String,
    pub counts: EditCounts,
}

/// Insertion / deletion / substitution totals of several models decoding the
/// same test set.
pub fn error_breakdown_report(
    models: &[(String, &Model)],
    data: &[(&[Vec<f64>], &[usize])],
    beam: Option<usize>,
) -> Result<Vec<BreakdownRow>> {
    models
        .iter()
        .map(|(name, m)| Ok(BreakdownRow { name: name.clone(), counts: evaluate(m, data, beam)? }))
        .collect()
}

pub fn format_breakdown(rows: &[BreakdownRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut s = format!("{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}\n", "model", "ins", "del", "sub", "ref", "ter");
    for r in rows {
        let c = r.counts;
        let _ = writeln!(
            s,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6.2}%",
            r.name,
            c.insertions,
            c.deletions,
            c.substitutions,
            c.reference,
            100.0 * c.rate()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use attn_transducer_core::data::{generate_synthetic_dataset, SyntheticTaskConfig};
    use attn_transducer_core::model::ModelConfig;

    fn setup() -> (Model, Vec<attn_transducer_core::data::Utterance>) {
        let task = SyntheticTaskConfig { vocab_size: 3, feature_dim: 4, utterances: 4, ..Default::default() };
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
        (Model::new(cfg, 1).unwrap(), generate_synthetic_dataset(&task).unwrap())
    }

    #[test]
    fn identical_models_give_identical_rows() {
        let (model, data) = setup();
        let pairs: Vec<_> = data.iter().map(|u| (&u.features[..], &u.targets[..])).collect();
        let rows = error_breakdown_report(&[("a".into(), &model), ("b".into(), &model)], &pairs, Some(2)).unwrap();
        assert_eq!(rows[0].counts, rows[1].counts);
        let table = format_breakdown(&rows);
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn bench_report_schema_round_trips() {
        let (model, data) = setup();
        let utts: Vec<_> = data.iter().enumerate().map(|(i, u)| (format!("u{i}"), u.features.clone())).collect();
        let report = stream_benchmark(&model, &utts, StreamConfig::default(), &Vocabulary::synthetic(3)).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.lookahead_ms, 40.0);
        let parsed = BenchReport::parse_tsv(&report.to_tsv()).unwrap();
        assert_eq!(parsed.rows.len(), 4);
        assert_eq!(parsed.lookahead_ms, 40.0);
        assert!(BenchReport::parse_tsv("id\taudio_ms\n").is_err());
    }
}
