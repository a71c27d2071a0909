//! Discrete-time Markov chains: transition kernels, forward marginals, path
//! KL divergence, and exact path enumeration of the diffusion samplers.

use std::fmt;

use serde::Serialize;

use crate::denoiser::TabularDenoiser;
use crate::error::{Error, Result};
use crate::par;
use crate::planners::{
    effective_table, joint_step_masses, p2_effective_f, p2_joint_row, top_k, MaskedView, PositionPlanner,
    SetPlanner,
};
use crate::sequence::{combinations, for_each_assignment, permutations, Sequence, Token, Vocab};

/// Enumeration limits for exact terminal distributions of position planners.
pub const MAX_ENUM_VOCAB: usize = 5;
pub const MAX_ENUM_LEN: usize = 6;
/// Tighter limits for set planners, whose kernels enumerate `(d-1)^L` draws
/// per successor.
pub const MAX_P2_VOCAB: usize = 3;
pub const MAX_P2_LEN: usize = 3;

/// Where absolute continuity failed: the reference charges a transition (or
/// initial state) the model gives zero mass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportViolation {
    /// `None` for the initial distribution or a plain categorical.
    pub step: Option<usize>,
    pub from: Option<String>,
    pub to: String,
}

impl fmt::Display for SupportViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.step, &self.from) {
            (Some(k), Some(from)) => write!(f, "step {k}: {from} -> {} has zero model mass", self.to),
            _ => write!(f, "outcome {} has zero model mass", self.to),
        }
    }
}

/// KL divergence on the extended reals.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum KlValue {
    Finite(f64),
    Infinite(SupportViolation),
}

impl KlValue {
    pub fn value(&self) -> f64 {
        match self {
            KlValue::Finite(v) => *v,
            KlValue::Infinite(_) => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, KlValue::Finite(_))
    }

    pub fn violation(&self) -> Option<&SupportViolation> {
        match self {
            KlValue::Finite(_) => None,
            KlValue::Infinite(v) => Some(v),
        }
    }
}

impl fmt::Display for KlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KlValue::Finite(v) => write!(f, "{v}"),
            KlValue::Infinite(v) => write!(f, "inf ({v})"),
        }
    }
}

/// `Σ p log(p/q)` with `0·log 0 = 0`; `+∞` when `p` charges a `q`-null point.
/// Both slices index the same outcomes.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> KlValue {
    assert_eq!(p.len(), q.len(), "distributions over different outcome sets");
    let mut total = 0.0;
    for (j, (&pj, &qj)) in p.iter().zip(q).enumerate() {
        if pj == 0.0 {
            continue;
        }
        if qj == 0.0 {
            return KlValue::Infinite(SupportViolation {
                step: None,
                from: None,
                to: j.to_string(),
            });
        }
        total += pj * (pj / qj).ln();
    }
    // Gibbs' inequality; only rounding can push the sum below zero
    KlValue::Finite(total.max(0.0))
}

/// A (possibly time-inhomogeneous) Markov kernel on states `0..num_states`.
pub trait TransitionKernel: Sync {
    fn num_states(&self) -> usize;

    /// Successors of `from` at `step` with positive probability, ascending by
    /// state index.
    fn row(&self, step: usize, from: usize) -> Vec<(usize, f64)>;

    fn describe(&self, state: usize) -> String {
        state.to_string()
    }
}

/// Kernel given by explicit row-stochastic matrices, one per step; the last
/// matrix is reused for later steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseKernel {
    n: usize,
    matrices: Vec<Vec<f64>>,
}

impl DenseKernel {
    pub fn new(n: usize, matrices: Vec<Vec<f64>>) -> Result<Self> {
        if n == 0 || matrices.is_empty() {
            return Err(Error::InvalidParameter("kernel needs states and at least one matrix".into()));
        }
        for (k, m) in matrices.iter().enumerate() {
            if m.len() != n * n {
                return Err(Error::InvalidParameter(format!("matrix {k} is not {n}x{n}")));
            }
            for r in 0..n {
                let row = &m[r * n..(r + 1) * n];
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::InvalidDistribution(format!("matrix {k} row {r} has invalid entries")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-10 {
                    return Err(Error::InvalidDistribution(format!("matrix {k} row {r} sums to {total}")));
                }
            }
        }
        Ok(Self { n, matrices })
    }

    pub fn prob(&self, step: usize, from: usize, to: usize) -> f64 {
        let m = &self.matrices[step.min(self.matrices.len() - 1)];
        m[from * self.n + to]
    }
}

impl TransitionKernel for DenseKernel {
    fn num_states(&self) -> usize {
        self.n
    }

    fn row(&self, step: usize, from: usize) -> Vec<(usize, f64)> {
        (0..self.n)
            .map(|to| (to, self.prob(step, from, to)))
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }
}

/// Marginals `r_0 .. r_steps` of the chain started from `initial`.
pub fn propagate<K: TransitionKernel + ?Sized>(kernel: &K, initial: &[f64], steps: usize) -> Vec<Vec<f64>> {
    let mut out = vec![initial.to_vec()];
    for k in 0..steps {
        let current = &out[k];
        let mut next = vec![0.0; kernel.num_states()];
        for (x, &mass) in current.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (y, p) in kernel.row(k, x) {
                next[y] += mass * p;
            }
        }
        out.push(next);
    }
    out
}

/// `KL(R-path ‖ Q-path)` over `steps` transitions by the chain rule:
/// `KL(μ‖ν) + Σ_k E_{x∼r_k} KL(R_k(·|x) ‖ Q_k(·|x))`.
pub fn path_kl<R, Q>(
    reference_initial: &[f64],
    reference: &R,
    model_initial: &[f64],
    model: &Q,
    steps: usize,
) -> KlValue
where
    R: TransitionKernel + ?Sized,
    Q: TransitionKernel + ?Sized,
{
    let mut total = match kl_categorical(reference_initial, model_initial) {
        KlValue::Finite(v) => v,
        KlValue::Infinite(mut v) => {
            v.to = reference.describe(v.to.parse().unwrap_or_default());
            return KlValue::Infinite(v);
        }
    };
    let marginals = propagate(reference, reference_initial, steps);
    for (k, r_k) in marginals.iter().take(steps).enumerate() {
        for (x, &mass) in r_k.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let q_row = model.row(k, x);
            let mut row_kl = 0.0;
            for (y, p) in reference.row(k, x) {
                let q = q_row
                    .binary_search_by_key(&y, |&(s, _)| s)
                    .map(|j| q_row[j].1)
                    .unwrap_or(0.0);
                if q == 0.0 {
                    return KlValue::Infinite(SupportViolation {
                        step: Some(k),
                        from: Some(reference.describe(x)),
                        to: reference.describe(y),
                    });
                }
                row_kl += p * (p / q).ln();
            }
            total += mass * row_kl;
        }
    }
    KlValue::Finite(total)
}

/// Generic lower bound on `log P(model chain ends at the reference's
/// terminal point)` from a reference chain that starts where the model does
/// and ends at a fixed datum: `-KL` of the two path laws.
pub fn chain_elbo<R, Q>(initial: &[f64], reference: &R, model: &Q, steps: usize) -> f64
where
    R: TransitionKernel + ?Sized,
    Q: TransitionKernel + ?Sized,
{
    -path_kl(initial, reference, initial, model, steps).value()
}

/// State space `{1..d}^L` indexed in lexicographic order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceSpace {
    pub vocab: Vocab,
    pub len: usize,
}

impl SequenceSpace {
    pub fn new(vocab: Vocab, len: usize) -> Self {
        Self { vocab, len }
    }

    pub fn of(den: &TabularDenoiser) -> Self {
        Self::new(den.vocab(), den.len())
    }

    pub fn num_states(&self) -> usize {
        self.vocab.num_states(self.len)
    }

    pub fn index(&self, x: &Sequence) -> usize {
        self.vocab.state_index(x)
    }

    pub fn state(&self, index: usize) -> Sequence {
        self.vocab.state_at(self.len, index)
    }

    pub fn all_masked(&self) -> usize {
        self.num_states() - 1
    }

    /// Point mass on the all-mask state.
    pub fn initial(&self) -> Vec<f64> {
        let mut init = vec![0.0; self.num_states()];
        init[self.all_masked()] = 1.0;
        init
    }

    /// Clean sequences paired with their masses in `dist`, lexicographic.
    pub fn clean_marginal(&self, dist: &[f64]) -> Vec<(Sequence, f64)> {
        self.vocab
            .clean_sequences(self.len)
            .into_iter()
            .map(|x| {
                let p = dist[self.index(&x)];
                (x, p)
            })
            .collect()
    }
}

/// Planner-guided sampler chain `Q^{θ,φ}`; the uniform planner gives the
/// vanilla chain `Q^θ`. Rows come from the joint law of the candidate draw
/// and the chosen position.
pub struct ModelKernel<'a> {
    pub den: &'a TabularDenoiser,
    pub planner: PositionPlanner,
}

impl TransitionKernel for ModelKernel<'_> {
    fn num_states(&self) -> usize {
        SequenceSpace::of(self.den).num_states()
    }

    fn row(&self, _step: usize, from: usize) -> Vec<(usize, f64)> {
        let space = SequenceSpace::of(self.den);
        let x = space.state(from);
        if x.is_clean() {
            return vec![(from, 1.0)];
        }
        let view = MaskedView::new(self.den, &x);
        let masses = joint_step_masses(&view, &self.planner);
        single_site_row(&space, &x, &view.masked, view.num_clean, &masses)
    }

    fn describe(&self, state: usize) -> String {
        SequenceSpace::of(self.den).state(state).to_string()
    }
}

fn single_site_row(space: &SequenceSpace, x: &Sequence, masked: &[usize], nc: usize, masses: &[f64]) -> Vec<(usize, f64)> {
    let mut row = Vec::new();
    for (s, &j) in masked.iter().enumerate() {
        for c in 0..nc {
            let m = masses[s * nc + c];
            if m > 0.0 {
                row.push((space.index(&x.with(j, c as Token + 1)), m));
            }
        }
    }
    row.sort_by_key(|&(y, _)| y);
    row
}

/// Reference chain `R^{G_φ}(·,·; x0)`: reveal `x0^i` at position `i` with
/// probability `Cat(i; G_φ(x0, x))`.
pub struct ReferenceKernel<'a> {
    pub den: &'a TabularDenoiser,
    pub planner: PositionPlanner,
    pub x0: Sequence,
}

impl ReferenceKernel<'_> {
    /// Planner weights at `x` with candidate `x0`, paired with masked positions.
    pub fn weights(&self, x: &Sequence) -> Vec<(usize, f64)> {
        reference_weights(self.den, &self.planner, &self.x0, x)
    }
}

pub(crate) fn reference_weights(den: &TabularDenoiser, planner: &PositionPlanner, x0: &Sequence, x: &Sequence) -> Vec<(usize, f64)> {
    let masked = x.masked_positions();
    let log_conf: Vec<f64> = masked.iter().map(|&j| den.log_prob(x, j, x0.get(j))).collect();
    let mut w = vec![0.0; masked.len()];
    planner.weights_from_log_conf(&log_conf, &mut w);
    masked.into_iter().zip(w).collect()
}

impl TransitionKernel for ReferenceKernel<'_> {
    fn num_states(&self) -> usize {
        SequenceSpace::of(self.den).num_states()
    }

    fn row(&self, _step: usize, from: usize) -> Vec<(usize, f64)> {
        let space = SequenceSpace::of(self.den);
        let x = space.state(from);
        if x.is_clean() {
            return vec![(from, 1.0)];
        }
        let mut row: Vec<(usize, f64)> = self
            .weights(&x)
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(j, w)| (space.index(&x.with(j, self.x0.get(j))), w))
            .collect();
        row.sort_by_key(|&(y, _)| y);
        row
    }

    fn describe(&self, state: usize) -> String {
        SequenceSpace::of(self.den).state(state).to_string()
    }
}

/// P2 sampler chain `Q^{θ,φ,2}`; rows enumerate the full candidate draw.
pub struct P2ModelKernel<'a> {
    pub den: &'a TabularDenoiser,
    pub planner: SetPlanner,
}

impl TransitionKernel for P2ModelKernel<'_> {
    fn num_states(&self) -> usize {
        SequenceSpace::of(self.den).num_states()
    }

    fn row(&self, _step: usize, from: usize) -> Vec<(usize, f64)> {
        let space = SequenceSpace::of(self.den);
        let x = space.state(from);
        if x.is_clean() {
            return vec![(from, 1.0)];
        }
        p2_joint_row(self.den, &self.planner, &x)
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }

    fn describe(&self, state: usize) -> String {
        SequenceSpace::of(self.den).state(state).to_string()
    }
}

/// Deterministic P2 reference chain: keep the top `k+1` positions scored at
/// candidate `x0` and fill them from `x0`.
pub struct P2ReferenceKernel<'a> {
    pub den: &'a TabularDenoiser,
    pub planner: SetPlanner,
    pub x0: Sequence,
}

impl P2ReferenceKernel<'_> {
    pub fn next(&self, x: &Sequence) -> Sequence {
        p2_reference_step(self.den, &self.planner, &self.x0, x)
    }
}

pub(crate) fn p2_reference_step(den: &TabularDenoiser, planner: &SetPlanner, x0: &Sequence, x: &Sequence) -> Sequence {
    let step = x.len() - x.num_masked();
    let scores = planner.scores(den, x0, x).expect("clean candidate on a masked state");
    let mut y = den.vocab().all_masked(x.len());
    for i in top_k(&scores, step + 1) {
        y.set(i, x0.get(i));
    }
    y
}

impl TransitionKernel for P2ReferenceKernel<'_> {
    fn num_states(&self) -> usize {
        SequenceSpace::of(self.den).num_states()
    }

    fn row(&self, _step: usize, from: usize) -> Vec<(usize, f64)> {
        let space = SequenceSpace::of(self.den);
        let x = space.state(from);
        if x.is_clean() {
            return vec![(from, 1.0)];
        }
        vec![(space.index(&self.next(&x)), 1.0)]
    }

    fn describe(&self, state: usize) -> String {
        SequenceSpace::of(self.den).state(state).to_string()
    }
}

/// Terminal law of a diffusion kernel run for `L` steps from all-mask, over
/// clean sequences in lexicographic order.
pub fn terminal_marginal<K: TransitionKernel + ?Sized>(kernel: &K, space: SequenceSpace) -> Vec<(Sequence, f64)> {
    let marginals = propagate(kernel, &space.initial(), space.len);
    space.clean_marginal(&marginals[space.len])
}

/// How a sampling path is identified.
#[derive(Clone, Debug, PartialEq)]
pub enum PathTable {
    /// Position planners: one probability per (terminal, unmasking order),
    /// terminal-major, orders lexicographic over 0-based positions.
    Orders { orders: Vec<Vec<usize>>, probs: Vec<f64> },
    /// Set planners: explicit state trajectories `x_1 .. x_L`.
    Trajectories(Vec<Trajectory>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub terminal: usize,
    pub states: Vec<Sequence>,
    pub prob: f64,
}

impl Trajectory {
    /// Clean coordinate sets along the path.
    pub fn unmasked_sets(&self) -> Vec<Vec<usize>> {
        self.states.iter().map(|s| s.unmasked_positions()).collect()
    }
}

/// Exact law of a sampler over paths, with its terminal marginal.
#[derive(Clone, Debug, PartialEq)]
pub struct PathDistribution {
    pub terminals: Vec<Sequence>,
    pub marginal: Vec<f64>,
    pub paths: PathTable,
}

impl PathDistribution {
    pub fn total_mass(&self) -> f64 {
        self.marginal.iter().sum()
    }

    pub fn prob(&self, x: &Sequence) -> f64 {
        self.terminals
            .binary_search(x)
            .map(|j| self.marginal[j])
            .unwrap_or(0.0)
    }

    pub fn log_prob(&self, x: &Sequence) -> f64 {
        self.prob(x).ln()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sequence, f64)> {
        self.terminals.iter().zip(self.marginal.iter().copied())
    }

    /// Probability of terminal `x` produced along `order` (position planners).
    pub fn path_prob(&self, x: &Sequence, order: &[usize]) -> Option<f64> {
        let PathTable::Orders { orders, probs } = &self.paths else {
            return None;
        };
        let t = self.terminals.binary_search(x).ok()?;
        let o = orders.iter().position(|s| s == order)?;
        Some(probs[t * orders.len() + o])
    }

    pub fn path_count(&self) -> usize {
        match &self.paths {
            PathTable::Orders { probs, .. } => probs.len(),
            PathTable::Trajectories(t) => t.len(),
        }
    }
}

fn check_budget(den: &TabularDenoiser, max_vocab: usize, max_len: usize, what: &str) -> Result<()> {
    if den.vocab().size() > max_vocab || den.len() > max_len {
        return Err(Error::Budget(format!(
            "{what} enumerates paths only for d <= {max_vocab} and L <= {max_len} (got d={}, L={})",
            den.vocab().size(),
            den.len()
        )));
    }
    Ok(())
}

/// Per-state table of `F(x, y, i)` laid out `position × (d-1)`; empty for
/// clean states.
fn effective_tables(den: &TabularDenoiser, planner: &PositionPlanner, jobs: usize) -> Vec<Vec<f64>> {
    let space = SequenceSpace::of(den);
    let nc = den.vocab().num_clean();
    par::map_indexed(jobs, space.num_states(), |idx| {
        let x = space.state(idx);
        if x.is_clean() {
            return Vec::new();
        }
        let view = MaskedView::new(den, &x);
        let by_slot = effective_table(&view, planner);
        let mut out = vec![0.0; den.len() * nc];
        for (s, &j) in view.masked.iter().enumerate() {
            out[j * nc..(j + 1) * nc].copy_from_slice(&by_slot[s * nc..(s + 1) * nc]);
        }
        out
    })
}

/// `p^{G_φ}_θ` by enumerating every (terminal, order) pair: each path has
/// probability `∏_k Cat(x^{σ(k)}; D(x^{σ(<k)}))·F(x^{σ(<k)}, x^{σ(k)}, σ(k))`.
pub fn exact_terminal_distribution(den: &TabularDenoiser, planner: &PositionPlanner, jobs: usize) -> Result<PathDistribution> {
    planner.validate()?;
    check_budget(den, MAX_ENUM_VOCAB, MAX_ENUM_LEN, "exact terminal distribution")?;
    let vocab = den.vocab();
    let len = den.len();
    let nc = vocab.num_clean();
    let space = SequenceSpace::of(den);
    let tables = effective_tables(den, planner, jobs);
    let orders = permutations(len);
    let terminals = vocab.clean_sequences(len);
    let per_terminal: Vec<Vec<f64>> = par::map_indexed(jobs, terminals.len(), |t| {
        let target = &terminals[t];
        orders
            .iter()
            .map(|order| {
                let mut x = vocab.all_masked(len);
                let mut p = 1.0;
                for &i in order {
                    let y = target.get(i);
                    let f = tables[space.index(&x)][i * nc + y as usize - 1];
                    p *= den.prob(&x, i, y) * f;
                    if p == 0.0 {
                        break;
                    }
                    x.set(i, y);
                }
                p
            })
            .collect()
    });
    let marginal = per_terminal.iter().map(|ps| ps.iter().sum()).collect();
    Ok(PathDistribution {
        terminals,
        marginal,
        paths: PathTable::Orders {
            orders,
            probs: per_terminal.into_iter().flatten().collect(),
        },
    })
}

/// `p^{G_{φ,2}}_θ` by enumerating state trajectories with transition
/// probabilities `∏_{i∈C(y)} Cat(y^i; D^i(x))·F^{k+1}(x, y)`.
pub fn exact_terminal_distribution_p2(den: &TabularDenoiser, planner: &SetPlanner) -> Result<PathDistribution> {
    planner.validate()?;
    check_budget(den, MAX_P2_VOCAB, MAX_P2_LEN, "exact P2 terminal distribution")?;
    let vocab = den.vocab();
    let len = den.len();
    let terminals = vocab.clean_sequences(len);
    let mut paths = Vec::new();
    let mut stack = vec![(vocab.all_masked(len), Vec::<Sequence>::new(), 1.0f64)];
    while let Some((x, history, p)) = stack.pop() {
        if x.is_clean() {
            let terminal = terminals.binary_search(&x).expect("clean terminal");
            paths.push(Trajectory {
                terminal,
                states: history,
                prob: p,
            });
            continue;
        }
        let successors = p2_successors(den, planner, &x)?;
        // reversed so that paths pop in lexicographic order
        for (y, q) in successors.into_iter().rev() {
            let mut h = history.clone();
            h.push(y.clone());
            stack.push((y, h, p * q));
        }
    }
    let mut marginal = vec![0.0; terminals.len()];
    for path in &paths {
        marginal[path.terminal] += path.prob;
    }
    Ok(PathDistribution {
        terminals,
        marginal,
        paths: PathTable::Trajectories(paths),
    })
}

/// Positive-probability successors of `x` under the P2 sampler, via `F^{k+1}`,
/// lexicographic.
fn p2_successors(den: &TabularDenoiser, planner: &SetPlanner, x: &Sequence) -> Result<Vec<(Sequence, f64)>> {
    let len = x.len();
    let step = len - x.num_masked();
    let nc = den.vocab().num_clean();
    let mut out = Vec::new();
    for kept in combinations(len, step + 1) {
        let fresh: Vec<usize> = kept.iter().copied().filter(|&i| x.is_masked(i)).collect();
        let mut result = Ok(());
        for_each_assignment(nc, fresh.len(), |a| {
            if result.is_err() {
                return;
            }
            let mut y = den.vocab().all_masked(len);
            for &i in &kept {
                y.set(i, x.get(i));
            }
            for (&i, &t) in fresh.iter().zip(a) {
                y.set(i, t);
            }
            let lead: f64 = fresh.iter().map(|&i| den.prob(x, i, y.get(i))).product();
            match p2_effective_f(den, planner, x, &y) {
                Ok(f) if lead * f > 0.0 => out.push((y, lead * f)),
                Ok(_) => {}
                Err(e) => result = Err(e),
            }
        });
        result?;
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// `r^{G_φ}_k(·; x0)` for `k = 0..=L`, each as (state, mass) with positive
/// mass in lexicographic order.
pub fn reference_chain_marginals(den: &TabularDenoiser, x0: &Sequence, planner: &PositionPlanner) -> Result<Vec<Vec<(Sequence, f64)>>> {
    planner.validate()?;
    x0.ensure_len(den.len())?;
    x0.ensure_clean()?;
    let kernel = ReferenceKernel {
        den,
        planner: *planner,
        x0: x0.clone(),
    };
    Ok(sparse_marginals(&kernel, SequenceSpace::of(den)))
}

pub fn reference_chain_marginals_p2(den: &TabularDenoiser, x0: &Sequence, planner: &SetPlanner) -> Result<Vec<Vec<(Sequence, f64)>>> {
    planner.validate()?;
    x0.ensure_len(den.len())?;
    x0.ensure_clean()?;
    let kernel = P2ReferenceKernel {
        den,
        planner: *planner,
        x0: x0.clone(),
    };
    Ok(sparse_marginals(&kernel, SequenceSpace::of(den)))
}

fn sparse_marginals<K: TransitionKernel>(kernel: &K, space: SequenceSpace) -> Vec<Vec<(Sequence, f64)>> {
    propagate(kernel, &space.initial(), space.len)
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(i, p)| (space.state(i), *p))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v3() -> Vocab {
        Vocab::new(3).unwrap()
    }

    fn random_den(seed: u64, len: usize) -> TabularDenoiser {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TabularDenoiser::random(v3(), len, 1.5, &mut rng).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_categorical(&[0.3, 0.7], &[0.3, 0.7]), KlValue::Finite(0.0));
        let v = kl_categorical(&[1.0, 0.0], &[0.5, 0.5]).value();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let inf = kl_categorical(&[0.5, 0.5], &[1.0, 0.0]);
        assert!(!inf.is_finite());
        assert_eq!(inf.violation().unwrap().to, "1");
    }

    #[test]
    fn identical_chains_have_zero_path_kl() {
        let k = DenseKernel::new(2, vec![vec![0.3, 0.7, 0.6, 0.4]]).unwrap();
        assert_eq!(path_kl(&[0.5, 0.5], &k, &[0.5, 0.5], &k, 3), KlValue::Finite(0.0));
    }

    #[test]
    fn path_kl_reports_the_offending_transition() {
        let r = DenseKernel::new(2, vec![vec![0.5, 0.5, 0.0, 1.0]]).unwrap();
        let q = DenseKernel::new(2, vec![vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
        let kl = path_kl(&[1.0, 0.0], &r, &[1.0, 0.0], &q, 2);
        let v = kl.violation().unwrap();
        assert_eq!(v.step, Some(0));
        assert_eq!(v.from.as_deref(), Some("0"));
        assert_eq!(v.to, "1");
    }

    #[test]
    fn single_position_terminal_is_the_denoiser_marginal() {
        let den = random_den(3, 1);
        let m = v3().parse("m").unwrap();
        for planner in [PositionPlanner::Uniform, PositionPlanner::Greedy, PositionPlanner::SoftGreedy { tau: 0.3 }] {
            let dist = exact_terminal_distribution(&den, &planner, 1).unwrap();
            for (x, p) in dist.iter() {
                assert!((p - den.prob(&m, 0, x.get(0))).abs() < 1e-15);
            }
        }
        for planner in [SetPlanner::P2TopK { eta: 2.0 }, SetPlanner::Rdm] {
            let dist = exact_terminal_distribution_p2(&den, &planner).unwrap();
            for (x, p) in dist.iter() {
                assert!((p - den.prob(&m, 0, x.get(0))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_reference_marginals_are_uniform_over_masked_states() {
        let den = random_den(5, 2);
        let x0 = v3().parse("12").unwrap();
        let r = reference_chain_marginals(&den, &x0, &PositionPlanner::Uniform).unwrap();
        assert_eq!(r[1], vec![(v3().parse("1m").unwrap(), 0.5), (v3().parse("m2").unwrap(), 0.5)]);
        assert_eq!(r[2], vec![(x0.clone(), 1.0)]);
    }

    #[test]
    fn greedy_reference_chain_is_deterministic() {
        let den = random_den(11, 4);
        let x0 = v3().parse("1212").unwrap();
        let r = reference_chain_marginals(&den, &x0, &PositionPlanner::Greedy).unwrap();
        for layer in &r {
            assert_eq!(layer.len(), 1);
            assert_eq!(layer[0].1, 1.0);
        }
        assert_eq!(r[4][0].0, x0);
    }

    #[test]
    fn p2_paths_keep_mask_counts() {
        let den = random_den(8, 3);
        let dist = exact_terminal_distribution_p2(&den, &SetPlanner::P2TopK { eta: 5.0 }).unwrap();
        let PathTable::Trajectories(paths) = &dist.paths else { panic!() };
        for path in paths {
            for (k, s) in path.states.iter().enumerate() {
                assert_eq!(s.num_masked(), 3 - (k + 1));
            }
        }
        assert!((dist.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let v = Vocab::new(3).unwrap();
        let den = TabularDenoiser::uniform(v, 4).unwrap();
        assert!(matches!(
            exact_terminal_distribution_p2(&den, &SetPlanner::Rdm),
            Err(Error::Budget(_))
        ));
        let den = TabularDenoiser::uniform(v, 7).unwrap();
        assert!(matches!(
            exact_terminal_distribution(&den, &PositionPlanner::Greedy, 1),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn parallel_width_is_bit_identical() {
        let den = random_den(21, 4);
        let planner = PositionPlanner::SoftGreedy { tau: 0.7 };
        let a = exact_terminal_distribution(&den, &planner, 1).unwrap();
        let b = exact_terminal_distribution(&den, &planner, 3).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn path_enumeration_matches_kernel_composition(seed in 0u64..10_000, len in 1usize..=4, tau in 0.1f64..5.0) {
            let den = random_den(seed, len);
            let space = SequenceSpace::of(&den);
            for planner in [PositionPlanner::Uniform, PositionPlanner::Greedy, PositionPlanner::SoftGreedy { tau }] {
                let dist = exact_terminal_distribution(&den, &planner, 1).unwrap();
                proptest::prop_assert!((dist.total_mass() - 1.0).abs() < 1e-9);
                let composed = terminal_marginal(&ModelKernel { den: &den, planner }, space);
                for ((x, p), (y, q)) in dist.iter().zip(&composed) {
                    proptest::prop_assert_eq!(x, y);
                    proptest::prop_assert!((p - q).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn p2_enumeration_matches_kernel_composition(seed in 0u64..10_000, len in 1usize..=3, eta in 0.0f64..6.0) {
            let den = random_den(seed, len);
            let space = SequenceSpace::of(&den);
            for planner in [SetPlanner::P2TopK { eta }, SetPlanner::Rdm] {
                let dist = exact_terminal_distribution_p2(&den, &planner).unwrap();
                proptest::prop_assert!((dist.total_mass() - 1.0).abs() < 1e-9);
                let composed = terminal_marginal(&P2ModelKernel { den: &den, planner }, space);
                for ((x, p), (y, q)) in dist.iter().zip(&composed) {
                    proptest::prop_assert_eq!(x, y);
                    proptest::prop_assert!((p - q).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn diffusion_kernel_rows_are_stochastic(seed in 0u64..10_000, len in 1usize..=3, tau in 0.1f64..5.0) {
            let den = random_den(seed, len);
            let space = SequenceSpace::of(&den);
            let x0 = v3().sequence(vec![1; len]).unwrap();
            let kernels: Vec<Box<dyn TransitionKernel>> = vec![
                Box::new(ModelKernel { den: &den, planner: PositionPlanner::Uniform }),
                Box::new(ModelKernel { den: &den, planner: PositionPlanner::Greedy }),
                Box::new(ModelKernel { den: &den, planner: PositionPlanner::SoftGreedy { tau } }),
                Box::new(ReferenceKernel { den: &den, planner: PositionPlanner::SoftGreedy { tau }, x0: x0.clone() }),
                Box::new(P2ModelKernel { den: &den, planner: SetPlanner::P2TopK { eta: tau } }),
                Box::new(P2ReferenceKernel { den: &den, planner: SetPlanner::Rdm, x0: x0.clone() }),
            ];
            for kernel in &kernels {
                for idx in 0..space.num_states() {
                    let x = space.state(idx);
                    if x.is_clean() {
                        continue;
                    }
                    let row = kernel.row(len - x.num_masked(), idx);
                    let total: f64 = row.iter().map(|(_, p)| p).sum();
                    proptest::prop_assert!((total - 1.0).abs() < 1e-10);
                    for (y, _) in row {
                        proptest::prop_assert_eq!(space.state(y).num_masked() + 1, x.num_masked());
                    }
                }
            }
        }
    }
}
