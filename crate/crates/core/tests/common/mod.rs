#![allow(dead_code)]

use papl_core::elbo::random_datum;
use papl_core::{DataDistribution, Sequence, TabularDenoiser, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random denoiser with logits `N(0, 1.5²)` and a random clean datum.
pub fn instance(seed: u64, d: usize, len: usize) -> (TabularDenoiser, Sequence) {
    let mut rng = rng(seed);
    let v = Vocab::new(d).unwrap();
    let den = TabularDenoiser::random(v, len, 1.5, &mut rng).unwrap();
    let x0 = random_datum(v, len, &mut rng);
    (den, x0)
}

/// Data distribution on up to `modes` random distinct sequences with random
/// masses.
pub fn random_data(seed: u64, d: usize, len: usize, modes: usize) -> DataDistribution {
    let mut r = rng(seed);
    let v = Vocab::new(d).unwrap();
    let mut support: Vec<Sequence> = (0..modes).map(|_| random_datum(v, len, &mut r)).collect();
    support.sort();
    support.dedup();
    let raw: Vec<f64> = support.iter().map(|_| rand::Rng::random_range(&mut r, 0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let head: f64 = probs[1..].iter().sum();
    probs[0] = 1.0 - head;
    DataDistribution::new(v, support, probs).unwrap()
}
