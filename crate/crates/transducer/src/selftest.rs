//! Built-in oracle checks run by the `selftest` command.

use attn_transducer_core::decode::{decode_utterance, NoClock, SearchConfig};
use attn_transducer_core::gradcheck::{check_model, FD_STEP};
use attn_transducer_core::loss::{blank_count_per_alignment, enumerate_paths, forward_backward, AlignmentGrid};
use attn_transducer_core::math::log_softmax;
use attn_transducer_core::model::{Model, ModelConfig};
use attn_transducer_core::quant::quantize_tensor;
use attn_transducer_core::stream::{StreamConfig, StreamSession};
use attn_transducer_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn failed(name: &'static str, e: impl std::fmt::Display) -> CheckResult {
    check(name, false, format!("error: {e}"))
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![loss_oracle(seed), gradient(seed), blank_reduction(), quantization(seed), streaming(seed)]
}

fn random_features(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..frames).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn loss_oracle(seed: u64) -> CheckResult {
    const NAME: &str = "forward-backward vs path enumeration";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (c, u, k) = (rng.random_range(1..=4), rng.random_range(0..=3), rng.random_range(2..=4));
        let targets: Vec<usize> = (0..u).map(|_| rng.random_range(1..k)).collect();
        let mut lp = Vec::new();
        for _ in 0..c * (u + 1) {
            let z: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            lp.extend(log_softmax(&z).expect("finite logits"));
        }
        let grid = match AlignmentGrid::new(c, k, &targets, lp) {
            Ok(g) => g,
            Err(e) => return failed(NAME, e),
        };
        match (forward_backward(&grid), enumerate_paths(&grid)) {
            (Ok(fb), Ok((nll, _))) => worst = worst.max((fb.nll - nll).abs()),
            (Err(e), _) | (_, Err(e)) => return failed(NAME, e),
        }
    }
    check(NAME, worst <= 1e-9, format!("max |difference| {worst:.2e} over 200 grids"))
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 3,
        pyramid_layers: 2,
        lstm_layers: 1,
        encoder_dim: 8,
        decoder_dim: 8,
        heads: 2,
        context: 1,
        chunk_width: 2,
        vocab_size: 3,
        ..Default::default()
    }
}

fn gradient(seed: u64) -> CheckResult {
    const NAME: &str = "end-to-end finite differences";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = || -> attn_transducer_core::Result<f64> {
        let model = Model::new(tiny_config(), seed)?;
        let f = random_features(&mut rng, 16, 3);
        Ok(check_model(&model, &f, &[1, 2], FD_STEP)?.max_relative)
    };
    match run() {
        Ok(e) => check(NAME, e <= 1e-5, format!("max relative error {e:.2e}")),
        Err(e) => failed(NAME, e),
    }
}

fn blank_reduction() -> CheckResult {
    const NAME: &str = "alignment blank count";
    match blank_count_per_alignment(800, 8, 4) {
        Ok(n) => check(NAME, n == 25, format!("T=800, mu=8, w=4 -> {n} blanks")),
        Err(e) => failed(NAME, e),
    }
}

fn quantization(seed: u64) -> CheckResult {
    const NAME: &str = "8-bit round-trip bound";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = Tensor::new(vec![8, 8], data).expect("8x8");
        let q = match quantize_tensor(&t) {
            Ok(q) => q,
            Err(e) => return failed(NAME, e),
        };
        let half = f64::from(q.scale) / 2.0;
        if q.dequantize().data().iter().zip(t.data()).any(|(a, b)| (a - b).abs() > half) {
            return check(NAME, false, "an entry exceeded scale/2".into());
        }
    }
    check(NAME, true, "100 random matrices within scale/2".into())
}

fn streaming(seed: u64) -> CheckResult {
    const NAME: &str = "streaming equals offline decoding";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = |rng: &mut ChaCha8Rng| -> attn_transducer_core::Result<bool> {
        let model = Model::new(tiny_config(), seed)?;
        let search = SearchConfig::new(3);
        for _ in 0..10 {
            let n = rng.random_range(8..120);
            let f = random_features(rng, n, 3);
            let offline = decode_utterance(&model, &f, search, &mut NoClock)?;
            let mut s = StreamSession::new(&model, StreamConfig { search, ..Default::default() }, NoClock)?;
            let mut at = 0;
            while at < n {
                let k = rng.random_range(1..=n - at);
                s.push_features(&f[at..at + k])?;
                at += k;
            }
            if s.finalize()?.tokens != offline.tokens {
                return Ok(false);
            }
        }
        Ok(true)
    };
    match run(&mut rng) {
        Ok(ok) => check(NAME, ok, "10 random utterances and push partitions".into()),
        Err(e) => failed(NAME, e),
    }
}
