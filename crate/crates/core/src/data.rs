//! Finite data distributions over clean sequences.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::chains::{kl_categorical, KlValue};
use crate::error::{Error, Result};
use crate::sequence::{Sequence, Vocab};

#[derive(Clone, Debug)]
pub struct DataDistribution {
    vocab: Vocab,
    len: usize,
    support: Vec<Sequence>,
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl PartialEq for DataDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.support == other.support && self.probs == other.probs
    }
}

impl DataDistribution {
    pub fn new(vocab: Vocab, support: Vec<Sequence>, probs: Vec<f64>) -> Result<Self> {
        let Some(first) = support.first() else {
            return Err(Error::InvalidDistribution("empty support".into()));
        };
        let len = first.len();
        if support.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} support points but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        for x in &support {
            x.ensure_len(len)?;
            x.ensure_clean()?;
            if x.mask_token() != vocab.mask() {
                return Err(Error::InvalidDistribution(format!("{x} uses a different vocabulary")));
            }
        }
        let mut sorted = support.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != support.len() {
            return Err(Error::InvalidDistribution("duplicate support points".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("probability {p} is negative or not finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let sampler = WeightedIndex::new(&probs)
            .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
        Ok(Self {
            vocab,
            len,
            support,
            probs,
            sampler,
        })
    }

    pub fn point_mass(x0: Sequence, vocab: Vocab) -> Result<Self> {
        Self::new(vocab, vec![x0], vec![1.0])
    }

    /// Three modes at d=4, L=4 with masses 0.5, 0.3, 0.2. The modes share
    /// tokens at some positions so that unmasking order matters for an
    /// imperfect denoiser.
    pub fn three_mode_toy() -> Self {
        let vocab = Vocab::new(4).expect("valid size");
        let support = ["1123", "2213", "3321"]
            .iter()
            .map(|s| vocab.parse(s).expect("valid literal"))
            .collect();
        Self::new(vocab, support, vec![0.5, 0.3, 0.2]).expect("valid toy distribution")
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn support(&self) -> &[Sequence] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sequence, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &Sequence {
        &self.support[self.sampler.sample(rng)]
    }

    /// `KL(p_data ‖ model)` where `model` gives the probability of a clean
    /// sequence.
    pub fn kl_to(&self, model: impl Fn(&Sequence) -> f64) -> KlValue {
        let q: Vec<f64> = self.support.iter().map(model).collect();
        kl_categorical(&self.probs, &q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let v = Vocab::new(3).unwrap();
        let a = v.parse("12").unwrap();
        let b = v.parse("21").unwrap();
        assert!(DataDistribution::new(v, vec![a.clone(), b.clone()], vec![0.5, 0.5]).is_ok());
        assert!(DataDistribution::new(v, vec![a.clone(), b.clone()], vec![0.5, 0.4]).is_err());
        assert!(DataDistribution::new(v, vec![a.clone(), a.clone()], vec![0.5, 0.5]).is_err());
        assert!(DataDistribution::new(v, vec![v.parse("1m").unwrap()], vec![1.0]).is_err());
    }

    #[test]
    fn toy_is_normalized() {
        let toy = DataDistribution::three_mode_toy();
        assert_eq!(toy.len(), 4);
        assert_eq!(toy.vocab().size(), 4);
        assert!((toy.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
