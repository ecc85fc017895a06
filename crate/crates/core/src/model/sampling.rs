use rand::Rng;

/// Decoder input for one training step: the true label with probability
/// `1 − p_ss`, otherwise a unit drawn uniformly from `1..=vocab_size`.
/// Blank is never returned.
pub fn scheduled_sample(true_label: usize, p_ss: f64, vocab_size: usize, rng: &mut impl Rng) -> usize {
    let coin: f64 = rng.random();
    if coin < p_ss {
        rng.random_range(1..=vocab_size)
    } else {
        true_label
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_probability_keeps_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..10_000).all(|_| scheduled_sample(3, 0.0, 16, &mut rng) == 3));
    }

    #[test]
    fn full_probability_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, vocab) = (100_000usize, 16usize);
        let mut counts = [0usize; 17];
        for _ in 0..n {
            counts[scheduled_sample(5, 1.0, vocab, &mut rng)] += 1;
        }
        assert_eq!(counts[0], 0);
        // binomial(n, 1/16): mean 6250, σ = sqrt(n p (1-p)) ≈ 76.5
        let p = 1.0 / vocab as f64;
        let mean = n as f64 * p;
        let sigma = libm::sqrt(n as f64 * p * (1.0 - p));
        for &c in &counts[1..] {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn blank_never_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!((0..1_000_000).all(|_| scheduled_sample(1, 0.5, 4, &mut rng) != 0));
    }
}
