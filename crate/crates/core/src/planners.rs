//! Position planners `G_φ(z, x)`, the P2 set planners, and the effective
//! planner `F` obtained by averaging a planner over candidate draws `z ∼ D(x)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{log_sum_exp, TabularDenoiser};
use crate::error::{Error, Result};
use crate::sequence::{for_each_assignment, Sequence, Token};

/// Planner selecting a single masked position to reveal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositionPlanner {
    Uniform,
    /// Most confident masked position, ties to the lowest index.
    Greedy,
    /// Masked positions weighted by `confidence^(1/τ)`.
    SoftGreedy { tau: f64 },
}

impl PositionPlanner {
    pub fn soft_greedy(tau: f64) -> Result<Self> {
        let p = PositionPlanner::SoftGreedy { tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PositionPlanner::SoftGreedy { tau } if !(tau > 0.0 && tau.is_finite()) => Err(
                Error::InvalidParameter(format!("planner temperature must be positive, got {tau}")),
            ),
            _ => Ok(()),
        }
    }

    /// Whether the planner output changes with the candidate `z`.
    pub fn uses_candidate(&self) -> bool {
        !matches!(self, PositionPlanner::Uniform)
    }

    pub fn name(&self) -> String {
        match self {
            PositionPlanner::Uniform => "uniform".into(),
            PositionPlanner::Greedy => "greedy".into(),
            PositionPlanner::SoftGreedy { tau } => format!("soft_greedy(tau={tau})"),
        }
    }

    /// Planner weights over the masked positions given their log-confidences
    /// `log Cat(z^j; D^j(x))`, in the same order.
    pub fn weights_from_log_conf(&self, log_conf: &[f64], out: &mut [f64]) {
        match *self {
            PositionPlanner::Uniform => {
                let w = 1.0 / log_conf.len() as f64;
                out.iter_mut().for_each(|o| *o = w);
            }
            PositionPlanner::Greedy => {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[argmax_first(log_conf)] = 1.0;
            }
            PositionPlanner::SoftGreedy { tau } => {
                for (o, l) in out.iter_mut().zip(log_conf) {
                    *o = l / tau;
                }
                let lse = log_sum_exp(out);
                out.iter_mut().for_each(|o| *o = (*o - lse).exp());
            }
        }
    }

    /// Index (into `log_conf`) drawn from the planner weights.
    pub(crate) fn sample_slot<R: Rng + ?Sized>(&self, log_conf: &[f64], scratch: &mut [f64], rng: &mut R) -> usize {
        match self {
            PositionPlanner::Uniform => rng.random_range(0..log_conf.len()),
            PositionPlanner::Greedy => argmax_first(log_conf),
            PositionPlanner::SoftGreedy { .. } => {
                self.weights_from_log_conf(log_conf, scratch);
                sample_index(scratch, rng)
            }
        }
    }

    /// `G_φ(z, x)` as a distribution over all `L` positions.
    pub fn plan(&self, den: &TabularDenoiser, z: &Sequence, x: &Sequence) -> Result<Vec<f64>> {
        self.validate()?;
        check_candidate(den, z, x)?;
        let masked = x.masked_positions();
        let log_conf: Vec<f64> = masked.iter().map(|&j| den.log_prob(x, j, z.get(j))).collect();
        let mut weights = vec![0.0; masked.len()];
        self.weights_from_log_conf(&log_conf, &mut weights);
        let mut out = vec![0.0; x.len()];
        for (&j, w) in masked.iter().zip(weights) {
            out[j] = w;
        }
        Ok(out)
    }
}

/// `1/N_M(x)` on masked positions.
pub fn plan_uniform(z: &Sequence, x: &Sequence) -> Result<Vec<f64>> {
    z.ensure_len(x.len())?;
    x.ensure_has_mask()?;
    let w = 1.0 / x.num_masked() as f64;
    Ok((0..x.len()).map(|i| if x.is_masked(i) { w } else { 0.0 }).collect())
}

pub fn plan_greedy(z: &Sequence, x: &Sequence, den: &TabularDenoiser) -> Result<Vec<f64>> {
    PositionPlanner::Greedy.plan(den, z, x)
}

pub fn plan_soft_greedy(z: &Sequence, x: &Sequence, den: &TabularDenoiser, tau: f64) -> Result<Vec<f64>> {
    PositionPlanner::soft_greedy(tau)?.plan(den, z, x)
}

fn check_candidate(den: &TabularDenoiser, z: &Sequence, x: &Sequence) -> Result<()> {
    x.ensure_len(den.len())?;
    z.ensure_len(den.len())?;
    x.ensure_has_mask()?;
    if let Some(j) = x.masked_positions().into_iter().find(|&j| !den.vocab().is_clean(z.get(j))) {
        return Err(Error::InvalidParameter(format!(
            "candidate {z} holds a mask at position {}, which is masked in {x}",
            j + 1
        )));
    }
    Ok(())
}

/// First index of the maximum.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = j;
        }
    }
    best
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    // rounding left u at the total; take the last index with positive mass
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// Denoiser log-probabilities at the masked coordinates of one state.
pub(crate) struct MaskedView {
    pub masked: Vec<usize>,
    pub num_clean: usize,
    /// `masked.len() × num_clean`, row per masked position.
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
}

impl MaskedView {
    pub fn new(den: &TabularDenoiser, x: &Sequence) -> Self {
        let masked = x.masked_positions();
        let nc = den.vocab().num_clean();
        let mut log_probs = vec![0.0; masked.len() * nc];
        for (s, &j) in masked.iter().enumerate() {
            den.log_probs_into(x, j, &mut log_probs[s * nc..(s + 1) * nc]);
        }
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Self {
            masked,
            num_clean: nc,
            log_probs,
            probs,
        }
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn log_prob(&self, slot: usize, token: Token) -> f64 {
        self.log_probs[slot * self.num_clean + token as usize - 1]
    }

    pub fn prob(&self, slot: usize, token: Token) -> f64 {
        self.probs[slot * self.num_clean + token as usize - 1]
    }

    pub fn probs_row(&self, slot: usize) -> &[f64] {
        &self.probs[slot * self.num_clean..(slot + 1) * self.num_clean]
    }

    /// Calls `f(assignment, weight)` for every clean assignment to the masked
    /// slots except `skip`, weight `∏ Cat(z^j; D^j(x))` over those slots. The
    /// skipped slot is left at token 1 in the assignment.
    fn for_each_candidate(&self, skip: Option<usize>, mut f: impl FnMut(&[Token], f64)) {
        let n = self.len();
        let free: Vec<usize> = (0..n).filter(|&s| Some(s) != skip).collect();
        let mut z = vec![1 as Token; n];
        for_each_assignment(self.num_clean, free.len(), |a| {
            let mut w = 1.0;
            for (&s, &t) in free.iter().zip(a) {
                z[s] = t;
                w *= self.prob(s, t);
            }
            f(&z, w);
        });
    }
}

/// `F(x, y, i)` for every masked slot and clean token, by exact enumeration of
/// `z` over the other masked coordinates. Row-major `slot × (d-1)`.
pub(crate) fn effective_table(view: &MaskedView, planner: &PositionPlanner) -> Vec<f64> {
    let n = view.len();
    let nc = view.num_clean;
    let mut out = vec![0.0; n * nc];
    if !planner.uses_candidate() {
        out.iter_mut().for_each(|o| *o = 1.0 / n as f64);
        return out;
    }
    let mut log_conf = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for slot in 0..n {
        for y in 1..=nc as Token {
            let mut acc = 0.0;
            view.for_each_candidate(Some(slot), |z, w| {
                for s in 0..n {
                    log_conf[s] = if s == slot { view.log_prob(s, y) } else { view.log_prob(s, z[s]) };
                }
                planner.weights_from_log_conf(&log_conf, &mut weights);
                acc += w * weights[slot];
            });
            out[slot * nc + y as usize - 1] = acc;
        }
    }
    out
}

/// One-step transition masses `Cat(y; D^i(x))·F(x, y, i)` for every masked
/// slot and token, computed from the joint law of `(z, i)` rather than from
/// `F`. Row-major `slot × (d-1)`.
pub(crate) fn joint_step_masses(view: &MaskedView, planner: &PositionPlanner) -> Vec<f64> {
    let n = view.len();
    let nc = view.num_clean;
    let mut out = vec![0.0; n * nc];
    if !planner.uses_candidate() {
        for (o, p) in out.iter_mut().zip(&view.probs) {
            *o = p / n as f64;
        }
        return out;
    }
    let mut log_conf = vec![0.0; n];
    let mut weights = vec![0.0; n];
    view.for_each_candidate(None, |z, w| {
        for s in 0..n {
            log_conf[s] = view.log_prob(s, z[s]);
        }
        planner.weights_from_log_conf(&log_conf, &mut weights);
        for s in 0..n {
            out[s * nc + z[s] as usize - 1] += w * weights[s];
        }
    });
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// A probability or bound together with its Monte Carlo standard error
/// (zero in exact mode).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
    pub samples: Option<usize>,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_err: 0.0,
            samples: None,
        }
    }
}

/// `F(x, y, i) = E_{z∼D(x)}[Cat(i; G_φ(z^{-i,y}, x))]`.
pub fn effective_planner_f(
    den: &TabularDenoiser,
    planner: &PositionPlanner,
    x: &Sequence,
    y: Token,
    position: usize,
    mode: EvalMode,
) -> Result<Estimate> {
    planner.validate()?;
    x.ensure_len(den.len())?;
    if position >= x.len() || !x.is_masked(position) {
        return Err(Error::PositionNotMasked {
            state: x.to_string(),
            position: position + 1,
        });
    }
    if !den.vocab().is_clean(y) {
        return Err(Error::TokenOutOfRange {
            token: y as usize,
            size: den.vocab().size(),
        });
    }
    let view = MaskedView::new(den, x);
    let slot = view.masked.iter().position(|&j| j == position).expect("masked");
    match mode {
        EvalMode::Exact => {
            let table = effective_table(&view, planner);
            Ok(Estimate::exact(table[slot * view.num_clean + y as usize - 1]))
        }
        EvalMode::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::InvalidParameter("Monte Carlo needs at least 2 samples".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(f_monte_carlo(&view, planner, slot, y, samples, &mut rng))
        }
    }
}

pub(crate) fn f_monte_carlo<R: Rng + ?Sized>(
    view: &MaskedView,
    planner: &PositionPlanner,
    slot: usize,
    y: Token,
    samples: usize,
    rng: &mut R,
) -> Estimate {
    let n = view.len();
    let mut log_conf = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        for (s, lc) in log_conf.iter_mut().enumerate() {
            let t = if s == slot {
                y
            } else {
                sample_index(view.probs_row(s), rng) as Token + 1
            };
            *lc = view.log_prob(s, t);
        }
        planner.weights_from_log_conf(&log_conf, &mut weights);
        sum += weights[slot];
        sum_sq += weights[slot] * weights[slot];
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Estimate {
        value: mean,
        std_err: (var / m).sqrt(),
        samples: Some(samples),
    }
}

/// P2 planner choosing which `k+1` positions are clean after step `k+1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetPlanner {
    /// Masked positions score `η·Cat(z^i; D^i(x))`, unmasked ones
    /// `Cat(z^i; δ(x^i))`.
    #[serde(rename = "p2_topk")]
    P2TopK { eta: f64 },
    /// Every position scores its denoiser confidence.
    Rdm,
}

impl SetPlanner {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SetPlanner::P2TopK { eta } if !(eta >= 0.0 && eta.is_finite()) => Err(Error::InvalidParameter(
                format!("remasking strength must be non-negative, got {eta}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            SetPlanner::P2TopK { eta } => format!("p2_topk(eta={eta})"),
            SetPlanner::Rdm => "rdm".into(),
        }
    }

    fn masked_weight(&self) -> f64 {
        match *self {
            SetPlanner::P2TopK { eta } => eta,
            SetPlanner::Rdm => 1.0,
        }
    }

    /// Per-position scores for candidate `z` at state `x`.
    pub fn scores(&self, den: &TabularDenoiser, z: &Sequence, x: &Sequence) -> Result<Vec<f64>> {
        self.validate()?;
        check_candidate(den, z, x)?;
        Ok((0..x.len())
            .map(|i| {
                if x.is_masked(i) {
                    self.masked_weight() * den.prob(x, i, z.get(i))
                } else if z.get(i) == x.get(i) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// The `step + 1` positions kept clean, ascending. `x` must have
    /// `L - step` masks.
    pub fn select(&self, den: &TabularDenoiser, z: &Sequence, x: &Sequence, step: usize) -> Result<Vec<usize>> {
        ensure_step(x, step)?;
        let scores = self.scores(den, z, x)?;
        Ok(top_k(&scores, step + 1))
    }

    fn select_view(&self, view: &MaskedView, x: &Sequence, z: &[Token], keep: usize, scores: &mut [f64]) -> Vec<usize> {
        let mut slot = 0;
        for (i, s) in scores.iter_mut().enumerate() {
            if x.is_masked(i) {
                *s = self.masked_weight() * view.prob(slot, z[i]);
                slot += 1;
            } else {
                *s = if z[i] == x.get(i) { 1.0 } else { 0.0 };
            }
        }
        top_k(scores, keep)
    }
}

fn ensure_step(x: &Sequence, step: usize) -> Result<()> {
    if step >= x.len() || x.num_masked() != x.len() - step {
        return Err(Error::InvalidParameter(format!(
            "state {x} has {} masks but step {step} of a length-{} chain needs {}",
            x.num_masked(),
            x.len(),
            x.len().saturating_sub(step)
        )));
    }
    Ok(())
}

/// Indices of the `k` largest scores, ties to the lowest index, returned in
/// ascending index order.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen = order[..k.min(scores.len())].to_vec();
    chosen.sort_unstable();
    chosen
}

/// `F^{k+1}(x, y)`: probability that the set planner keeps exactly the clean
/// coordinates of `y` when `z` is pinned to `y` there.
pub fn p2_effective_f(den: &TabularDenoiser, planner: &SetPlanner, x: &Sequence, y: &Sequence) -> Result<f64> {
    planner.validate()?;
    x.ensure_len(den.len())?;
    y.ensure_len(den.len())?;
    let step = x.len() - x.num_masked();
    ensure_step(x, step)?;
    let kept = y.unmasked_positions();
    if kept.len() != step + 1 {
        return Err(Error::InvalidParameter(format!(
            "successor {y} must have {} clean coordinates",
            step + 1
        )));
    }
    let view = MaskedView::new(den, x);
    // free coordinates: masked in x and not pinned by y
    let free: Vec<usize> = (0..view.len()).filter(|&s| y.is_masked(view.masked[s])).collect();
    let mut z: Vec<Token> = (0..x.len())
        .map(|i| if y.is_masked(i) { x.get(i) } else { y.get(i) })
        .collect();
    let mut scores = vec![0.0; x.len()];
    let mut total = 0.0;
    for_each_assignment(view.num_clean, free.len(), |a| {
        let mut w = 1.0;
        for (&s, &t) in free.iter().zip(a) {
            z[view.masked[s]] = t;
            w *= view.prob(s, t);
        }
        if planner.select_view(&view, x, &z, step + 1, &mut scores) == kept {
            total += w;
        }
    });
    Ok(total)
}

/// Successor distribution of the P2 sampler from `x`, by enumerating the
/// full candidate draw `z`. Keys are successor state indices.
pub(crate) fn p2_joint_row(den: &TabularDenoiser, planner: &SetPlanner, x: &Sequence) -> BTreeMap<usize, f64> {
    let vocab = den.vocab();
    let step = x.len() - x.num_masked();
    let view = MaskedView::new(den, x);
    let mut z: Vec<Token> = x.tokens().to_vec();
    let mut scores = vec![0.0; x.len()];
    let mut row = BTreeMap::new();
    view.for_each_candidate(None, |a, w| {
        for (s, &j) in view.masked.iter().enumerate() {
            z[j] = a[s];
        }
        let kept = planner.select_view(&view, x, &z, step + 1, &mut scores);
        let mut y = vocab.all_masked(x.len());
        for i in kept {
            y.set(i, z[i]);
        }
        *row.entry(vocab.state_index(&y)).or_insert(0.0) += w;
    });
    row
}
