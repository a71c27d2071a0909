//! Vocabulary, sequences and masked-state enumeration.
//!
//! Tokens follow the 1-based convention `1..=d` where the final symbol `d` is
//! the mask. Positions are 0-based in code; every external format (sequence
//! text, denoiser tables, sample traces) renders them 1-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Token = u8;

/// Largest vocabulary the compact text format and the `u8` token type support.
pub const MAX_VOCAB: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidVocab(format!(
                "size {size} leaves no clean token besides the mask"
            )));
        }
        if size > MAX_VOCAB {
            return Err(Error::InvalidVocab(format!(
                "size {size} exceeds the supported maximum {MAX_VOCAB}"
            )));
        }
        Ok(Self { size })
    }

    /// Number of symbols including the mask.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mask(&self) -> Token {
        self.size as Token
    }

    pub fn num_clean(&self) -> usize {
        self.size - 1
    }

    pub fn clean_tokens(&self) -> impl Iterator<Item = Token> + Clone {
        1..self.mask()
    }

    pub fn is_clean(&self, token: Token) -> bool {
        token >= 1 && token < self.mask()
    }

    pub fn sequence(&self, tokens: impl Into<Vec<Token>>) -> Result<Sequence> {
        Sequence::new(tokens.into(), *self)
    }

    pub fn all_masked(&self, len: usize) -> Sequence {
        Sequence {
            tokens: vec![self.mask(); len],
            mask: self.mask(),
        }
    }

    pub fn parse(&self, text: &str) -> Result<Sequence> {
        let err = |reason: &str| Error::Parse {
            input: text.to_string(),
            reason: reason.to_string(),
        };
        let text = text.trim();
        let pieces: Vec<&str> = if text.contains(',') {
            text.split(',').map(str::trim).collect()
        } else {
            text.split("").filter(|s| !s.is_empty()).collect()
        };
        if pieces.is_empty() || pieces.iter().any(|p| p.is_empty()) {
            return Err(err("empty token"));
        }
        let mut tokens = Vec::with_capacity(pieces.len());
        for piece in pieces {
            let token = if piece == "m" {
                self.mask()
            } else {
                let value: usize = piece.parse().map_err(|_| err("token is not a number or 'm'"))?;
                if value == 0 || value > self.size {
                    return Err(Error::TokenOutOfRange {
                        token: value,
                        size: self.size,
                    });
                }
                value as Token
            };
            tokens.push(token);
        }
        Ok(Sequence {
            tokens,
            mask: self.mask(),
        })
    }

    /// `d^len`, the number of sequences of length `len` including masked ones.
    pub fn num_states(&self, len: usize) -> usize {
        self.size.pow(len as u32)
    }

    /// Base-`d` rank of `x` (token `t` is digit `t - 1`, first position most
    /// significant). Lexicographic order of sequences matches index order.
    pub fn state_index(&self, x: &Sequence) -> usize {
        x.tokens
            .iter()
            .fold(0usize, |acc, &t| acc * self.size + (t as usize - 1))
    }

    pub fn state_at(&self, len: usize, mut index: usize) -> Sequence {
        let mut tokens = vec![0 as Token; len];
        for slot in tokens.iter_mut().rev() {
            *slot = (index % self.size) as Token + 1;
            index /= self.size;
        }
        Sequence {
            tokens,
            mask: self.mask(),
        }
    }

    /// Every fully clean sequence of length `len`, in lexicographic order.
    pub fn clean_sequences(&self, len: usize) -> Vec<Sequence> {
        let mut out = Vec::new();
        for_each_assignment(self.num_clean(), len, |assignment| {
            out.push(Sequence {
                tokens: assignment.to_vec(),
                mask: self.mask(),
            });
        });
        out
    }
}

impl TryFrom<usize> for Vocab {
    type Error = Error;

    fn try_from(size: usize) -> Result<Self> {
        Vocab::new(size)
    }
}

impl From<Vocab> for usize {
    fn from(v: Vocab) -> usize {
        v.size
    }
}

/// A fixed-length token string. Carries its vocabulary's mask token so that
/// masked coordinates can be queried without threading the vocabulary around.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sequence {
    tokens: Vec<Token>,
    mask: Token,
}

impl Sequence {
    pub fn new(tokens: Vec<Token>, vocab: Vocab) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t == 0 || t > vocab.mask()) {
            return Err(Error::TokenOutOfRange {
                token: bad as usize,
                size: vocab.size(),
            });
        }
        Ok(Self {
            tokens,
            mask: vocab.mask(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn mask_token(&self) -> Token {
        self.mask
    }

    pub fn get(&self, position: usize) -> Token {
        self.tokens[position]
    }

    pub fn is_masked(&self, position: usize) -> bool {
        self.tokens[position] == self.mask
    }

    /// `N_M(x)`: the number of masked coordinates.
    pub fn num_masked(&self) -> usize {
        self.tokens.iter().filter(|&&t| t == self.mask).count()
    }

    pub fn is_clean(&self) -> bool {
        self.num_masked() == 0
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_masked(i)).collect()
    }

    pub fn unmasked_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_masked(i)).collect()
    }

    /// Copy with `position` set to `token`.
    pub fn with(&self, position: usize, token: Token) -> Sequence {
        let mut tokens = self.tokens.clone();
        tokens[position] = token;
        Sequence {
            tokens,
            mask: self.mask,
        }
    }

    pub fn set(&mut self, position: usize, token: Token) {
        self.tokens[position] = token;
    }

    pub fn with_masked(&self, position: usize) -> Sequence {
        self.with(position, self.mask)
    }

    /// Keeps the coordinates in `keep` and masks the rest: `x^{σ(<i)}` when
    /// `keep` is an order prefix.
    pub fn restricted_to(&self, keep: &[usize]) -> Sequence {
        let mut tokens = vec![self.mask; self.len()];
        for &i in keep {
            tokens[i] = self.tokens[i];
        }
        Sequence {
            tokens,
            mask: self.mask,
        }
    }

    pub fn ensure_len(&self, len: usize) -> Result<()> {
        if self.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: self.len(),
            });
        }
        Ok(())
    }

    pub fn ensure_clean(&self) -> Result<()> {
        if !self.is_clean() {
            return Err(Error::NotClean(self.to_string()));
        }
        Ok(())
    }

    pub fn ensure_has_mask(&self) -> Result<()> {
        if self.is_clean() {
            return Err(Error::NothingMasked(self.to_string()));
        }
        Ok(())
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let compact = self.mask <= 10;
        for (n, &t) in self.tokens.iter().enumerate() {
            if !compact && n > 0 {
                f.write_str(",")?;
            }
            if t == self.mask {
                f.write_str("m")?;
            } else {
                write!(f, "{t}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{self}]")
    }
}

impl Serialize for Sequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Text form with the vocabulary size, `"<d>:<tokens>"`, used where a sequence
/// travels without its vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSequence(pub Sequence);

impl FromStr for TaggedSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (size, body) = s.split_once(':').ok_or_else(|| Error::Parse {
            input: s.to_string(),
            reason: "expected <vocab-size>:<tokens>".to_string(),
        })?;
        let size: usize = size.trim().parse().map_err(|_| Error::Parse {
            input: s.to_string(),
            reason: "vocabulary size is not a number".to_string(),
        })?;
        Ok(TaggedSequence(Vocab::new(size)?.parse(body)?))
    }
}

impl<'de> Deserialize<'de> for TaggedSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// `d_HAM(x, y)`.
pub fn hamming(x: &Sequence, y: &Sequence) -> Result<usize> {
    x.ensure_len(y.len())?;
    Ok(x.tokens
        .iter()
        .zip(&y.tokens)
        .filter(|(a, b)| a != b)
        .count())
}

/// `X_k(x0)`: the `C(L, k)` states equal to `x0` with exactly `k` coordinates
/// masked, ordered lexicographically by mask index set.
pub fn enumerate_masked_states(x0: &Sequence, k: usize) -> Result<Vec<Sequence>> {
    x0.ensure_clean()?;
    if k > x0.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot mask {k} coordinates of a length-{} sequence",
            x0.len()
        )));
    }
    Ok(combinations(x0.len(), k)
        .into_iter()
        .map(|masked| {
            let mut x = x0.clone();
            for i in masked {
                x.set(i, x0.mask);
            }
            x
        })
        .collect())
}

/// All `k`-subsets of `0..n` as sorted index vectors, in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let Some(i) = (0..k).rev().find(|&i| current[i] < n - k + i) else {
            return out;
        };
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    loop {
        out.push(current.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
    }
}

/// Calls `f` with every assignment of clean tokens `1..=num_clean` to `slots`
/// coordinates, odometer style with the last coordinate fastest.
pub fn for_each_assignment(num_clean: usize, slots: usize, mut f: impl FnMut(&[Token])) {
    let mut current = vec![1 as Token; slots];
    loop {
        f(&current);
        let mut i = slots;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if (current[i] as usize) < num_clean {
                current[i] += 1;
                break;
            }
            current[i] = 1;
        }
    }
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}
