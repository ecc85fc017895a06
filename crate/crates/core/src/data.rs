//! Synthetic transduction task standing in for speech.
//!
//! Every unit owns a fixed random feature pattern. An utterance is a short
//! unit sequence rendered left to right: each unit occupies one slot of the
//! utterance, its pattern (under a smooth onset/offset envelope) fills most
//! of the slot and the rest is silence. Gaussian noise is added everywhere.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    /// Number of non-blank units.
    pub vocab_size: usize,
    pub feature_dim: usize,
    /// Inclusive range of utterance lengths in frames.
    pub frames: (usize, usize),
    /// Inclusive range of units per utterance.
    pub tokens: (usize, usize),
    /// Noise standard deviation.
    pub noise: f64,
    pub utterances: usize,
    /// Seeds the unit patterns; datasets that share it describe the same task.
    pub task_seed: u64,
    /// Seeds the utterances.
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            vocab_size: 15,
            feature_dim: 16,
            frames: (48, 128),
            tokens: (1, 4),
            noise: 0.3,
            utterances: 500,
            task_seed: 7,
            seed: 1,
        }
    }
}

/// Frames a unit needs at minimum inside its slot.
pub const MIN_FRAMES_PER_TOKEN: usize = 8;

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.vocab_size < 2 {
            return bad("synthetic vocabulary needs at least 2 units");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.frames.0 > self.frames.1 || self.tokens.0 > self.tokens.1 {
            return bad("ranges must be ordered (min, max)");
        }
        if self.tokens.1 * MIN_FRAMES_PER_TOKEN > self.frames.0.max(1) && self.tokens.1 > 0 {
            return bad("shortest utterance cannot hold the longest unit sequence");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a finite non-negative level");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: Vec<Vec<f64>>,
    /// Units in `1..=vocab_size`; never blank.
    pub targets: Vec<usize>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.len()
    }
}

/// The unit patterns of a task: row `k - 1` belongs to unit `k`.
pub fn unit_patterns(cfg: &SyntheticTaskConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.task_seed);
    let norm = 1.0 / crate::math::sqrt(cfg.feature_dim as f64) * 2.0;
    (0..cfg.vocab_size)
        .map(|_| (0..cfg.feature_dim).map(|_| if rng.random::<bool>() { norm } else { -norm } * rng.random_range(0.5..1.5)).collect())
        .collect()
}

/// Frames of one unit of duration `len` without noise.
pub fn render_unit(pattern: &[f64], len: usize) -> Vec<Vec<f64>> {
    (0..len)
        .map(|i| {
            let x = (i as f64 + 0.5) / len as f64;
            let env = crate::math::sqrt(libm::sin(core::f64::consts::PI * x).max(0.0));
            pattern.iter().map(|p| p * env).collect()
        })
        .collect()
}

pub fn generate_synthetic_dataset(cfg: &SyntheticTaskConfig) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    let patterns = unit_patterns(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config(alloc::format!("{e}")))?;
    let mut out = Vec::with_capacity(cfg.utterances);
    for _ in 0..cfg.utterances {
        let u = rng.random_range(cfg.tokens.0..=cfg.tokens.1);
        let t = rng.random_range(cfg.frames.0..=cfg.frames.1);
        let targets: Vec<usize> = (0..u).map(|_| rng.random_range(1..=cfg.vocab_size)).collect();
        let mut features = alloc::vec![alloc::vec![0.0; cfg.feature_dim]; t];
        // slot boundaries at round(i * t / u)
        for (i, &k) in targets.iter().enumerate() {
            let (lo, hi) = (i * t / u, (i + 1) * t / u);
            let slot = hi - lo;
            let min_len = (slot * 3 / 5).max(MIN_FRAMES_PER_TOKEN).min(slot);
            let len = rng.random_range(min_len..=(slot * 9 / 10).max(min_len));
            let start = lo + rng.random_range(0..=slot - len);
            for (f, frame) in render_unit(&patterns[k - 1], len).into_iter().enumerate() {
                features[start + f] = frame;
            }
        }
        if cfg.noise > 0.0 {
            for frame in &mut features {
                for v in frame.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
        }
        out.push(Utterance { features, targets });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticTaskConfig {
        SyntheticTaskConfig { utterances: 20, ..Default::default() }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(generate_synthetic_dataset(&small()).unwrap(), generate_synthetic_dataset(&small()).unwrap());
        let other = SyntheticTaskConfig { seed: 2, ..small() };
        assert_ne!(generate_synthetic_dataset(&small()).unwrap(), generate_synthetic_dataset(&other).unwrap());
    }

    #[test]
    fn shape_and_label_contract() {
        let cfg = small();
        for u in generate_synthetic_dataset(&cfg).unwrap() {
            assert!((cfg.frames.0..=cfg.frames.1).contains(&u.frames()));
            assert!((cfg.tokens.0..=cfg.tokens.1).contains(&u.targets.len()));
            assert!(u.targets.iter().all(|&k| (1..=cfg.vocab_size).contains(&k)));
            assert!(u.features.iter().all(|f| f.len() == cfg.feature_dim));
            // blank-dominated regime: far fewer units than frames
            assert!(u.targets.len() * 10 <= u.frames());
        }
    }

    #[test]
    fn noiseless_single_unit_contains_its_pattern() {
        let cfg = SyntheticTaskConfig { noise: 0.0, tokens: (1, 1), utterances: 5, ..Default::default() };
        let patterns = unit_patterns(&cfg);
        for u in generate_synthetic_dataset(&cfg).unwrap() {
            let k = u.targets[0];
            let active: Vec<usize> = (0..u.frames()).filter(|&i| u.features[i].iter().any(|&v| v != 0.0)).collect();
            let (start, len) = (active[0], active.len());
            assert_eq!(active, (start..start + len).collect::<Vec<_>>());
            assert_eq!(&u.features[start..start + len], &render_unit(&patterns[k - 1], len)[..]);
        }
    }

    #[test]
    fn invalid_ranges() {
        for cfg in [
            SyntheticTaskConfig { vocab_size: 1, ..small() },
            SyntheticTaskConfig { frames: (50, 40), ..small() },
            SyntheticTaskConfig { tokens: (3, 2), ..small() },
            SyntheticTaskConfig { frames: (10, 20), tokens: (1, 4), ..small() },
            SyntheticTaskConfig { noise: -1.0, ..small() },
        ] {
            assert!(generate_synthetic_dataset(&cfg).is_err());
        }
    }
}
