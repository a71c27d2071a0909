//! Tabular denoiser `D_θ` with one logit vector per (masked state, masked position).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{for_each_assignment, Sequence, Token, Vocab};

/// Upper bound on the number of stored logits (`d^L · L · (d-1)`).
pub const MAX_TABLE_ENTRIES: usize = 1 << 22;

/// Logits are stored densely over every state in `{1..d}^L`, including states
/// that are clean and positions that are unmasked; those slots are never read.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDenoiser {
    vocab: Vocab,
    len: usize,
    logits: Vec<f64>,
}

impl TabularDenoiser {
    /// All-zero logits, i.e. the uniform denoiser.
    pub fn uniform(vocab: Vocab, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidParameter("sequence length must be positive".into()));
        }
        let states = (vocab.size() as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
        let entries = states
            .saturating_mul(len as u128)
            .saturating_mul(vocab.num_clean() as u128);
        if entries > MAX_TABLE_ENTRIES as u128 {
            return Err(Error::Budget(format!(
                "a tabular denoiser with d={} and L={len} needs {entries} logits (limit {MAX_TABLE_ENTRIES})",
                vocab.size()
            )));
        }
        Ok(Self {
            vocab,
            len,
            logits: vec![0.0; entries as usize],
        })
    }

    /// Independent `N(0, scale²)` logits.
    pub fn random<R: Rng + ?Sized>(vocab: Vocab, len: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mut den = Self::uniform(vocab, len)?;
        let normal = Normal::new(0.0, scale)
            .map_err(|e| Error::InvalidParameter(format!("logit scale {scale}: {e}")))?;
        for v in &mut den.logits {
            *v = normal.sample(rng);
        }
        Ok(den)
    }

    /// Builds a denoiser whose predictive distributions are exactly the given
    /// probability vectors (logits are their logarithms).
    ///
    /// Every masked (state, position) pair must be covered exactly once.
    pub fn from_table<I>(vocab: Vocab, len: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Sequence, usize, Vec<f64>)>,
    {
        let mut den = Self::uniform(vocab, len)?;
        let mut covered = vec![false; den.logits.len() / vocab.num_clean()];
        for (state, position, probs) in entries {
            state.ensure_len(len)?;
            if state.mask_token() != vocab.mask() {
                return Err(Error::InvalidDistribution(format!(
                    "state {state} uses a different vocabulary"
                )));
            }
            if position >= len || !state.is_masked(position) {
                return Err(Error::PositionNotMasked {
                    state: state.to_string(),
                    position: position + 1,
                });
            }
            validate_probs(&probs, vocab.num_clean())
                .map_err(|e| Error::InvalidDistribution(format!("entry ({state}, {}): {e}", position + 1)))?;
            let slot = den.slot(&state, position);
            if std::mem::replace(&mut covered[slot], true) {
                return Err(Error::InvalidDistribution(format!(
                    "duplicate entry for ({state}, {})",
                    position + 1
                )));
            }
            let offset = slot * vocab.num_clean();
            for (dst, p) in den.logits[offset..offset + vocab.num_clean()].iter_mut().zip(&probs) {
                *dst = p.ln();
            }
        }
        for (state, position) in den.masked_entries() {
            if !covered[den.slot(&state, position)] {
                return Err(Error::InvalidDistribution(format!(
                    "missing entry for ({state}, {})",
                    position + 1
                )));
            }
        }
        Ok(den)
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

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn slot(&self, x: &Sequence, position: usize) -> usize {
        self.vocab.state_index(x) * self.len + position
    }

    /// Offset of the logit vector for `(x, position)` in [`Self::params`].
    pub fn offset(&self, x: &Sequence, position: usize) -> usize {
        self.slot(x, position) * self.vocab.num_clean()
    }

    pub fn logits(&self, x: &Sequence, position: usize) -> &[f64] {
        let o = self.offset(x, position);
        &self.logits[o..o + self.vocab.num_clean()]
    }

    pub fn logits_mut(&mut self, x: &Sequence, position: usize) -> &mut [f64] {
        let o = self.offset(x, position);
        let n = self.vocab.num_clean();
        &mut self.logits[o..o + n]
    }

    /// Writes `log Cat(·; D^i(x))` over clean tokens into `out` for a masked
    /// position. Unchecked: the caller guarantees `x^i` is masked.
    pub fn log_probs_into(&self, x: &Sequence, position: usize, out: &mut [f64]) {
        log_softmax_into(self.logits(x, position), out);
    }

    pub fn probs_into(&self, x: &Sequence, position: usize, out: &mut [f64]) {
        softmax_into(self.logits(x, position), out);
    }

    /// `Cat(y; D^i(x))`, with the one-hot `δ(x^i)` at unmasked positions.
    pub fn prob(&self, x: &Sequence, position: usize, y: Token) -> f64 {
        if !x.is_masked(position) {
            return if x.get(position) == y { 1.0 } else { 0.0 };
        }
        if !self.vocab.is_clean(y) {
            return 0.0;
        }
        self.log_prob_masked(x, position, y).exp()
    }

    /// `log Cat(y; D^i(x))`.
    pub fn log_prob(&self, x: &Sequence, position: usize, y: Token) -> f64 {
        if !x.is_masked(position) {
            return if x.get(position) == y { 0.0 } else { f64::NEG_INFINITY };
        }
        if !self.vocab.is_clean(y) {
            return f64::NEG_INFINITY;
        }
        self.log_prob_masked(x, position, y)
    }

    fn log_prob_masked(&self, x: &Sequence, position: usize, y: Token) -> f64 {
        let logits = self.logits(x, position);
        logits[y as usize - 1] - log_sum_exp(logits)
    }

    /// Per-position categorical over clean tokens: `softmax(logits[x, i])` at
    /// masked positions and `δ(x^i)` elsewhere.
    pub fn predict(&self, x: &Sequence) -> Result<Vec<Vec<f64>>> {
        x.ensure_len(self.len)?;
        x.ensure_has_mask()?;
        let n = self.vocab.num_clean();
        Ok((0..self.len)
            .map(|i| {
                let mut out = vec![0.0; n];
                if x.is_masked(i) {
                    self.probs_into(x, i, &mut out);
                } else {
                    out[x.get(i) as usize - 1] = 1.0;
                }
                out
            })
            .collect())
    }

    /// Every (state, masked position) pair the table parameterizes, states in
    /// lexicographic order.
    pub fn masked_entries(&self) -> Vec<(Sequence, usize)> {
        let mut out = Vec::new();
        // tokens 1..=d, the top value being the mask
        for_each_assignment(self.vocab.size(), self.len, |tokens| {
            let x = Sequence::new(tokens.to_vec(), self.vocab).expect("tokens in range");
            for i in x.masked_positions() {
                out.push((x.clone(), i));
            }
        });
        out
    }

    /// Serializable table of predictive distributions.
    pub fn to_table(&self) -> DenoiserTable {
        let n = self.vocab.num_clean();
        DenoiserTable {
            vocab_size: self.vocab.size(),
            length: self.len,
            entries: self
                .masked_entries()
                .into_iter()
                .map(|(state, position)| {
                    let mut probs = vec![0.0; n];
                    self.probs_into(&state, position, &mut probs);
                    TableEntry {
                        state: state.to_string(),
                        position: position + 1,
                        probs,
                    }
                })
                .collect(),
        }
    }
}

/// On-disk denoiser table. Positions are 1-based; states use the sequence text
/// format (`m` for the mask).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserTable {
    pub vocab_size: usize,
    pub length: usize,
    pub entries: Vec<TableEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub state: String,
    pub position: usize,
    pub probs: Vec<f64>,
}

impl DenoiserTable {
    pub fn build(&self) -> Result<TabularDenoiser> {
        let vocab = Vocab::new(self.vocab_size)?;
        let entries = self
            .entries
            .iter()
            .map(|e| {
                if e.position == 0 {
                    return Err(Error::InvalidParameter("table positions are 1-based".into()));
                }
                Ok((vocab.parse(&e.state)?, e.position - 1, e.probs.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        TabularDenoiser::from_table(vocab, self.length, entries)
    }
}

fn validate_probs(probs: &[f64], expected_len: usize) -> std::result::Result<(), String> {
    if probs.len() != expected_len {
        return Err(format!("expected {expected_len} probabilities, got {}", probs.len()));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p <= 0.0 || **p > 1.0) {
        return Err(format!("probability {p} is not in (0, 1]"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("probabilities sum to {total}"));
    }
    Ok(())
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let lse = log_sum_exp(logits);
    for (o, l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v3() -> Vocab {
        Vocab::new(3).unwrap()
    }

    #[test]
    fn uniform_logits_give_half_half() {
        let den = TabularDenoiser::uniform(v3(), 2).unwrap();
        let out = den.predict(&v3().parse("mm").unwrap()).unwrap();
        assert_eq!(out, vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
    }

    #[test]
    fn unmasked_positions_are_one_hot() {
        let den = TabularDenoiser::uniform(v3(), 2).unwrap();
        let out = den.predict(&v3().parse("m2").unwrap()).unwrap();
        assert_eq!(out[1], vec![0.0, 1.0]);
        assert_eq!(den.prob(&v3().parse("m2").unwrap(), 1, 2), 1.0);
    }

    #[test]
    fn hand_softmax() {
        let mut den = TabularDenoiser::uniform(v3(), 1).unwrap();
        let x = v3().parse("m").unwrap();
        den.logits_mut(&x, 0).copy_from_slice(&[1f64.ln(), 3f64.ln()]);
        let out = den.predict(&x).unwrap();
        assert!((out[0][0] - 0.25).abs() < 1e-15);
        assert!((out[0][1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn fully_clean_state_is_rejected() {
        let den = TabularDenoiser::uniform(v3(), 2).unwrap();
        assert!(matches!(
            den.predict(&v3().parse("12").unwrap()),
            Err(Error::NothingMasked(_))
        ));
    }

    #[test]
    fn table_validation() {
        let v = v3();
        let all: Vec<_> = TabularDenoiser::uniform(v, 2)
            .unwrap()
            .masked_entries()
            .into_iter()
            .map(|(s, i)| (s, i, vec![0.5, 0.5]))
            .collect();
        assert_eq!(all.len(), 6);
        let den = TabularDenoiser::from_table(v, 2, all.clone()).unwrap();
        for (s, i, _) in &all {
            assert!((den.prob(s, *i, 1) - 0.5).abs() < 1e-15);
        }

        let mut bad = all.clone();
        bad[0].2 = vec![0.4, 0.5];
        assert!(matches!(
            TabularDenoiser::from_table(v, 2, bad),
            Err(Error::InvalidDistribution(_))
        ));

        let missing = all[1..].to_vec();
        assert!(TabularDenoiser::from_table(v, 2, missing).is_err());

        let mut dup = all.clone();
        dup.push(all[0].clone());
        assert!(TabularDenoiser::from_table(v, 2, dup).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let v = Vocab::new(9).unwrap();
        assert!(matches!(
            TabularDenoiser::uniform(v, 9),
            Err(Error::Budget(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn random_tables_round_trip(seed in 0u64..1000, len in 1usize..=3) {
            let v = Vocab::new(4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let den = TabularDenoiser::random(v, len, 2.0, &mut rng).unwrap();
            let table = den.to_table();
            let rebuilt = table.build().unwrap();
            for (s, i) in den.masked_entries() {
                let mut a = vec![0.0; 3];
                let mut b = vec![0.0; 3];
                den.probs_into(&s, i, &mut a);
                rebuilt.probs_into(&s, i, &mut b);
                let total: f64 = a.iter().sum();
                proptest::prop_assert!((total - 1.0).abs() < 1e-12);
                for (p, q) in a.iter().zip(&b) {
                    proptest::prop_assert!(*p > 0.0);
                    proptest::prop_assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }
}
