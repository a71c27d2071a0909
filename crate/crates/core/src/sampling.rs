//! Stochastic samplers mirroring the exact kernels.
//!
//! Samples are produced in fixed-size chunks. Chunk `c` draws from a ChaCha8
//! generator seeded with the run seed on stream `c`, so the output does not
//! depend on how many threads process the chunks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::denoiser::{log_softmax_into, TabularDenoiser};
use crate::error::{Error, Result};
use crate::par;
use crate::planners::{sample_index, top_k, PositionPlanner, SetPlanner};
use crate::sequence::{Sequence, Token, Vocab};

pub const CHUNK_SIZE: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub record_paths: bool,
    /// Worker threads; results are identical for every value.
    pub jobs: usize,
}

impl SamplerConfig {
    pub fn new(seed: u64, n_samples: usize) -> Self {
        Self {
            seed,
            n_samples,
            record_paths: false,
            jobs: 1,
        }
    }

    pub fn with_paths(mut self) -> Self {
        self.record_paths = true;
        self
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs;
        self
    }
}

/// How one sample reached its terminal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SamplePath {
    /// Positions in the order they were unmasked.
    Order(Vec<usize>),
    /// Clean coordinate set after each step of a set-planner run.
    KeptSets(Vec<Vec<usize>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub vocab: Vocab,
    pub len: usize,
    pub terminals: Vec<Sequence>,
    /// Present when paths were recorded.
    pub paths: Option<Vec<SamplePath>>,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    terminal: &'a Sequence,
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kept: Option<Vec<Vec<usize>>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.terminals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminals.is_empty()
    }

    /// Counts per clean sequence in lexicographic order (the order of
    /// [`Vocab::clean_sequences`]).
    pub fn counts(&self) -> Vec<u64> {
        let nc = self.vocab.num_clean();
        let mut counts = vec![0u64; nc.pow(self.len as u32)];
        for x in &self.terminals {
            let idx = x.tokens().iter().fold(0usize, |acc, &t| acc * nc + (t as usize - 1));
            counts[idx] += 1;
        }
        counts
    }

    /// One JSON object per line with the terminal and its path, positions
    /// 1-based.
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for (j, terminal) in self.terminals.iter().enumerate() {
            let path = self.paths.as_ref().map(|p| &p[j]);
            let one_based = |v: &[usize]| v.iter().map(|i| i + 1).collect::<Vec<_>>();
            let record = TraceRecord {
                terminal,
                order: match path {
                    Some(SamplePath::Order(o)) => Some(one_based(o)),
                    _ => None,
                },
                kept: match path {
                    Some(SamplePath::KeptSets(s)) => Some(s.iter().map(|k| one_based(k)).collect()),
                    _ => None,
                },
            };
            serde_json::to_writer(&mut out, &record).map_err(|e| Error::Io(e.into()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Denoiser probabilities for every (state, position) slot, precomputed once
/// per run.
struct Tables<'a> {
    den: &'a TabularDenoiser,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl<'a> Tables<'a> {
    fn new(den: &'a TabularDenoiser) -> Self {
        let nc = den.vocab().num_clean();
        let params = den.params();
        let mut log_probs = vec![0.0; params.len()];
        for (src, dst) in params.chunks(nc).zip(log_probs.chunks_mut(nc)) {
            log_softmax_into(src, dst);
        }
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Self { den, log_probs, probs }
    }

    fn offset(&self, x: &Sequence, position: usize) -> usize {
        self.den.offset(x, position)
    }

    fn draw<R: Rng + ?Sized>(&self, x: &Sequence, position: usize, rng: &mut R) -> (Token, f64) {
        let nc = self.den.vocab().num_clean();
        let o = self.offset(x, position);
        let t = sample_index(&self.probs[o..o + nc], rng);
        (t as Token + 1, self.log_probs[o + t])
    }
}

fn validate(den: &TabularDenoiser, config: &SamplerConfig) -> Result<()> {
    if config.n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if den.is_empty() {
        return Err(Error::InvalidParameter("empty sequences".into()));
    }
    Ok(())
}

fn run_chunks<F>(den: &TabularDenoiser, config: &SamplerConfig, one: F) -> SampleSet
where
    F: Fn(&mut ChaCha8Rng) -> (Sequence, SamplePath) + Sync + Send,
{
    let chunks = config.n_samples.div_ceil(CHUNK_SIZE);
    let results = par::map_indexed(config.jobs, chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(c as u64);
        let size = CHUNK_SIZE.min(config.n_samples - c * CHUNK_SIZE);
        (0..size).map(|_| one(&mut rng)).collect::<Vec<_>>()
    });
    let mut terminals = Vec::with_capacity(config.n_samples);
    let mut paths = config.record_paths.then(|| Vec::with_capacity(config.n_samples));
    for (terminal, path) in results.into_iter().flatten() {
        terminals.push(terminal);
        if let Some(p) = paths.as_mut() {
            p.push(path);
        }
    }
    SampleSet {
        vocab: den.vocab(),
        len: den.len(),
        terminals,
        paths,
    }
}

/// Vanilla ancestral sampler: each step picks a masked position uniformly,
/// then draws its token from the denoiser.
pub fn sample_vanilla(den: &TabularDenoiser, config: &SamplerConfig) -> Result<SampleSet> {
    validate(den, config)?;
    let tables = Tables::new(den);
    let vocab = den.vocab();
    let len = den.len();
    Ok(run_chunks(den, config, |rng| {
        let mut x = vocab.all_masked(len);
        let mut order = Vec::with_capacity(len);
        for _ in 0..len {
            let masked = x.masked_positions();
            let i = masked[rng.random_range(0..masked.len())];
            let (t, _) = tables.draw(&x, i, rng);
            x.set(i, t);
            order.push(i);
        }
        (x, SamplePath::Order(order))
    }))
}

/// Planner-guided sampler: each step draws a full candidate `z ∼ D(x)`
/// (unmasked coordinates are held by the one-hot convention and consume no
/// randomness), picks `i ∼ G_φ(z, x)` and commits `z^i`.
pub fn sample_planned(den: &TabularDenoiser, planner: &PositionPlanner, config: &SamplerConfig) -> Result<SampleSet> {
    validate(den, config)?;
    planner.validate()?;
    let tables = Tables::new(den);
    let vocab = den.vocab();
    let len = den.len();
    Ok(run_chunks(den, config, |rng| {
        let mut x = vocab.all_masked(len);
        let mut order = Vec::with_capacity(len);
        let mut z = vec![0 as Token; len];
        let mut log_conf = Vec::with_capacity(len);
        let mut scratch = vec![0.0; len];
        for _ in 0..len {
            let masked = x.masked_positions();
            log_conf.clear();
            for &j in &masked {
                let (t, lp) = tables.draw(&x, j, rng);
                z[j] = t;
                log_conf.push(lp);
            }
            let slot = planner.sample_slot(&log_conf, &mut scratch[..masked.len()], rng);
            let i = masked[slot];
            x.set(i, z[i]);
            order.push(i);
        }
        (x, SamplePath::Order(order))
    }))
}

/// P2 sampler: each step draws `z ∼ D(x_k)`, keeps the top `k+1` scored
/// positions filled from `z` and remasks the rest.
pub fn sample_p2(den: &TabularDenoiser, planner: &SetPlanner, config: &SamplerConfig) -> Result<SampleSet> {
    validate(den, config)?;
    planner.validate()?;
    let tables = Tables::new(den);
    let vocab = den.vocab();
    let len = den.len();
    let boost = match *planner {
        SetPlanner::P2TopK { eta } => eta,
        SetPlanner::Rdm => 1.0,
    };
    Ok(run_chunks(den, config, |rng| {
        let mut x = vocab.all_masked(len);
        let mut kept_sets = Vec::with_capacity(len);
        let mut z = vec![0 as Token; len];
        let mut scores = vec![0.0; len];
        for step in 0..len {
            for j in 0..len {
                if x.is_masked(j) {
                    let (t, lp) = tables.draw(&x, j, rng);
                    z[j] = t;
                    scores[j] = boost * lp.exp();
                } else {
                    z[j] = x.get(j);
                    scores[j] = 1.0;
                }
            }
            let kept = top_k(&scores, step + 1);
            let mut y = vocab.all_masked(len);
            for &i in &kept {
                y.set(i, z[i]);
            }
            x = y;
            kept_sets.push(kept);
        }
        (x, SamplePath::KeptSets(kept_sets))
    }))
}
