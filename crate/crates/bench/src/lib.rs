//! Shared fixtures for the benchmarks.

use papl_core::elbo::random_datum;
use papl_core::training::sample_batch;
use papl_core::{DataDistribution, Example, Sequence, TabularDenoiser, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random denoiser over `d` tokens (mask included) and length `len`, with a
/// random clean datum.
pub fn instance(seed: u64, d: usize, len: usize) -> (TabularDenoiser, Sequence) {
    let mut r = rng(seed);
    let vocab = Vocab::new(d).expect("valid vocabulary");
    let den = TabularDenoiser::random(vocab, len, 1.5, &mut r).expect("valid shape");
    let x0 = random_datum(vocab, len, &mut r);
    (den, x0)
}

/// A batch from the three-mode toy and a denoiser of matching shape.
pub fn toy_batch(seed: u64, size: usize) -> (TabularDenoiser, Vec<Example>) {
    let data = DataDistribution::three_mode_toy();
    let mut r = rng(seed);
    let den = TabularDenoiser::random(data.vocab(), data.len(), 0.5, &mut r).expect("valid shape");
    let batch = sample_batch(&data, size, &mut r);
    (den, batch)
}
