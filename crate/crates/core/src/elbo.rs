//! Evidence lower bounds for masked diffusion samplers, with the exact
//! log-marginals they bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chains::{
    exact_terminal_distribution, exact_terminal_distribution_p2, p2_reference_step, propagate, reference_weights,
    ReferenceKernel, SequenceSpace, MAX_ENUM_LEN, MAX_P2_LEN, MAX_P2_VOCAB,
};
use crate::denoiser::{log_sum_exp, TabularDenoiser};
use crate::error::{Error, Result};
use crate::planners::{
    argmax_first, effective_planner_f, effective_table, f_monte_carlo, sample_index, EvalMode, MaskedView,
    PositionPlanner, SetPlanner,
};
use crate::quadrature::integrate;
use crate::sequence::{binomial, enumerate_masked_states, for_each_assignment, permutations, Sequence, Token, Vocab};

/// Largest number of candidate draws `(d-1)^L` exact bound evaluation will
/// enumerate per state.
pub const MAX_EXACT_CANDIDATES: usize = 1 << 20;

fn check_datum(den: &TabularDenoiser, x0: &Sequence) -> Result<()> {
    x0.ensure_len(den.len())?;
    x0.ensure_clean()?;
    if x0.mask_token() != den.vocab().mask() {
        return Err(Error::InvalidParameter(format!("{x0} uses a different vocabulary")));
    }
    Ok(())
}

fn check_exact_budget(den: &TabularDenoiser) -> Result<()> {
    let draws = (den.vocab().num_clean() as u128).pow(den.len() as u32);
    if draws > MAX_EXACT_CANDIDATES as u128 {
        return Err(Error::Budget(format!(
            "exact evaluation would enumerate {draws} candidate draws per state; use Monte Carlo mode"
        )));
    }
    Ok(())
}

/// `(1/L!) Σ_σ Σ_i log Cat(x0^{σ(i)}; D(x0^{σ(<i)}))`.
pub fn elbo_uniform_permutation_form(den: &TabularDenoiser, x0: &Sequence) -> Result<f64> {
    check_datum(den, x0)?;
    if den.len() > MAX_ENUM_LEN {
        return Err(Error::Budget(format!(
            "permutation form enumerates L! orders; L={} exceeds {MAX_ENUM_LEN}",
            den.len()
        )));
    }
    let orders = permutations(den.len());
    let mut total = 0.0;
    for order in &orders {
        let mut x = den.vocab().all_masked(den.len());
        let mut path = 0.0;
        for &i in order {
            path += den.log_prob(&x, i, x0.get(i));
            x.set(i, x0.get(i));
        }
        total += path;
    }
    Ok(total / orders.len() as f64)
}

/// `Σ_k E_{x ∼ Unif X_{L-k}(x0)} [(1/(L-k)) Σ_{masked i} log Cat(x0^i; D^i(x))]`.
pub fn elbo_uniform_timestep_form(den: &TabularDenoiser, x0: &Sequence) -> Result<f64> {
    check_datum(den, x0)?;
    let len = den.len();
    let mut total = 0.0;
    for k in 0..len {
        let masks = len - k;
        let states = enumerate_masked_states(x0, masks)?;
        let mut layer = 0.0;
        for x in &states {
            let s: f64 = x.masked_positions().iter().map(|&i| den.log_prob(x, i, x0.get(i))).sum();
            layer += s / masks as f64;
        }
        total += layer / states.len() as f64;
    }
    Ok(total)
}

/// Planner-aware bound split into the weighted cross-entropy `e1` and the
/// planner-mismatch term `e2 ≤ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PElbo {
    pub e1: f64,
    pub e2: f64,
    pub total: f64,
    /// Zero in exact mode.
    pub std_err: f64,
}

/// `E1 + E2` with the reference chain that reveals `x0^i` at planner-chosen
/// positions, `G_φ(x0, x)`.
pub fn p_elbo(den: &TabularDenoiser, planner: &PositionPlanner, x0: &Sequence, mode: EvalMode) -> Result<PElbo> {
    planner.validate()?;
    check_datum(den, x0)?;
    match mode {
        EvalMode::Exact => {
            check_exact_budget(den)?;
            Ok(p_elbo_exact(den, planner, x0))
        }
        EvalMode::MonteCarlo { samples, seed } => p_elbo_monte_carlo(den, planner, x0, samples, seed),
    }
}

fn p_elbo_exact(den: &TabularDenoiser, planner: &PositionPlanner, x0: &Sequence) -> PElbo {
    let space = SequenceSpace::of(den);
    let kernel = ReferenceKernel {
        den,
        planner: *planner,
        x0: x0.clone(),
    };
    let marginals = propagate(&kernel, &space.initial(), den.len());
    let (mut e1, mut e2) = (0.0, 0.0);
    for r_k in marginals.iter().take(den.len()) {
        for (idx, &mass) in r_k.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let x = space.state(idx);
            let view = MaskedView::new(den, &x);
            let f = effective_table(&view, planner);
            let weights = reference_weights(den, planner, x0, &x);
            let (s1, s2) = step_terms(&view, &weights, x0, |slot, y| f[slot * view.num_clean + y as usize - 1]);
            e1 += mass * s1;
            e2 += mass * s2;
        }
    }
    PElbo {
        e1,
        e2,
        total: e1 + e2,
        std_err: 0.0,
    }
}

/// Per-state contributions `Σ G_i log Cat(x0^i)` and `-Σ G_i log(G_i / F_i)`.
fn step_terms(view: &MaskedView, weights: &[(usize, f64)], x0: &Sequence, mut f: impl FnMut(usize, Token) -> f64) -> (f64, f64) {
    let (mut s1, mut s2) = (0.0, 0.0);
    for (slot, &(i, g)) in weights.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let y = x0.get(i);
        s1 += g * view.log_prob(slot, y);
        s2 -= g * (g / f(slot, y)).ln();
    }
    (s1, s2)
}

fn p_elbo_monte_carlo(den: &TabularDenoiser, planner: &PositionPlanner, x0: &Sequence, samples: usize, seed: u64) -> Result<PElbo> {
    if samples < 2 {
        return Err(Error::InvalidParameter("Monte Carlo needs at least 2 samples".into()));
    }
    // F is estimated inside a logarithm, which biases e2 downward (the
    // estimate stays a lower bound in expectation).
    let inner = ((samples as f64).sqrt().ceil() as usize).max(32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum1, mut sum2, mut sum_sq) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let mut x = den.vocab().all_masked(den.len());
        let (mut p1, mut p2) = (0.0, 0.0);
        for _ in 0..den.len() {
            let view = MaskedView::new(den, &x);
            let weights = reference_weights(den, planner, x0, &x);
            let (s1, s2) = step_terms(&view, &weights, x0, |slot, y| {
                if planner.uses_candidate() {
                    f_monte_carlo(&view, planner, slot, y, inner, &mut rng).value
                } else {
                    weights[slot].1
                }
            });
            p1 += s1;
            p2 += s2;
            let w: Vec<f64> = weights.iter().map(|&(_, w)| w).collect();
            let (i, _) = weights[sample_index(&w, &mut rng)];
            x.set(i, x0.get(i));
        }
        sum1 += p1;
        sum2 += p2;
        sum_sq += (p1 + p2) * (p1 + p2);
    }
    let n = samples as f64;
    let (e1, e2) = (sum1 / n, sum2 / n);
    let mean = e1 + e2;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(PElbo {
        e1,
        e2,
        total: mean,
        std_err: (var / n).sqrt(),
    })
}

/// Bound accumulated along the deterministic greedy path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathBound {
    pub value: f64,
    /// Greedy: positions revealed per step. P2: clean set after each step.
    pub path: Vec<Vec<usize>>,
}

/// `Σ_k Σ_{i: Y_k^i = m} log Cat(x0^i; D^i(Y_k))` where `Y_{k+1}` reveals the
/// masked position most confident in `x0` (ties to the lowest index).
pub fn elbo_greedy(den: &TabularDenoiser, x0: &Sequence) -> Result<PathBound> {
    check_datum(den, x0)?;
    let mut y = den.vocab().all_masked(den.len());
    let mut value = 0.0;
    let mut path = Vec::with_capacity(den.len());
    for _ in 0..den.len() {
        let masked = y.masked_positions();
        let log_conf: Vec<f64> = masked.iter().map(|&i| den.log_prob(&y, i, x0.get(i))).collect();
        value += log_conf.iter().sum::<f64>();
        let j = masked[argmax_first(&log_conf)];
        y.set(j, x0.get(j));
        path.push(vec![j]);
    }
    Ok(PathBound { value, path })
}

/// Same accumulation along the deterministic P2 reference path.
pub fn elbo_p2_topk(den: &TabularDenoiser, planner: &SetPlanner, x0: &Sequence) -> Result<PathBound> {
    planner.validate()?;
    check_datum(den, x0)?;
    if den.vocab().size() > MAX_P2_VOCAB || den.len() > MAX_P2_LEN {
        return Err(Error::Budget(format!(
            "P2 bounds are evaluated for d <= {MAX_P2_VOCAB} and L <= {MAX_P2_LEN}"
        )));
    }
    let mut y = den.vocab().all_masked(den.len());
    let mut value = 0.0;
    let mut path = Vec::with_capacity(den.len());
    for _ in 0..den.len() {
        value += y
            .masked_positions()
            .iter()
            .map(|&i| den.log_prob(&y, i, x0.get(i)))
            .sum::<f64>();
        y = p2_reference_step(den, planner, x0, &y);
        path.push(y.unmasked_positions());
    }
    Ok(PathBound { value, path })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SoftmaxElbo {
    pub e1: f64,
    /// `E Σ_i G_i log(C(x0, x)/C(z^{-i,x0^i}, x))`.
    pub correction: f64,
    pub total: f64,
    pub std_err: f64,
}

/// Soft-greedy bound: weighted cross-entropy under the soft-greedy reference
/// chain plus the normalizer-ratio correction.
pub fn elbo_softmax(den: &TabularDenoiser, tau: f64, x0: &Sequence, mode: EvalMode) -> Result<SoftmaxElbo> {
    let planner = PositionPlanner::soft_greedy(tau)?;
    check_datum(den, x0)?;
    match mode {
        EvalMode::Exact => {
            check_exact_budget(den)?;
            Ok(softmax_exact(den, &planner, tau, x0))
        }
        EvalMode::MonteCarlo { samples, seed } => softmax_monte_carlo(den, &planner, tau, x0, samples, seed),
    }
}

/// `log C^τ(z, x)` from per-slot log-confidences.
fn log_normalizer(log_conf: &[f64], tau: f64, scratch: &mut [f64]) -> f64 {
    for (s, l) in scratch.iter_mut().zip(log_conf) {
        *s = l / tau;
    }
    log_sum_exp(scratch)
}

fn softmax_exact(den: &TabularDenoiser, planner: &PositionPlanner, tau: f64, x0: &Sequence) -> SoftmaxElbo {
    let space = SequenceSpace::of(den);
    let kernel = ReferenceKernel {
        den,
        planner: *planner,
        x0: x0.clone(),
    };
    let marginals = propagate(&kernel, &space.initial(), den.len());
    let (mut e1, mut correction) = (0.0, 0.0);
    for r_k in marginals.iter().take(den.len()) {
        for (idx, &mass) in r_k.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let x = space.state(idx);
            let view = MaskedView::new(den, &x);
            let weights = reference_weights(den, planner, x0, &x);
            let n = view.len();
            let base: Vec<f64> = (0..n).map(|s| view.log_prob(s, x0.get(view.masked[s]))).collect();
            let mut scratch = vec![0.0; n];
            let log_c0 = log_normalizer(&base, tau, &mut scratch);
            let mut log_conf = vec![0.0; n];
            for (slot, &(i, g)) in weights.iter().enumerate() {
                e1 += mass * g * base[slot];
                // E_z log C(z^{-i,x0^i}, x) over the other masked coordinates
                let others: Vec<usize> = (0..n).filter(|&s| s != slot).collect();
                let mut expected = 0.0;
                for_each_assignment(view.num_clean, others.len(), |a| {
                    let mut w = 1.0;
                    log_conf[slot] = base[slot];
                    for (&s, &t) in others.iter().zip(a) {
                        log_conf[s] = view.log_prob(s, t);
                        w *= view.prob(s, t);
                    }
                    expected += w * log_normalizer(&log_conf, tau, &mut scratch);
                });
                debug_assert_eq!(view.masked[slot], i);
                correction += mass * g * (log_c0 - expected);
            }
        }
    }
    SoftmaxElbo {
        e1,
        correction,
        total: e1 + correction,
        std_err: 0.0,
    }
}

fn softmax_monte_carlo(
    den: &TabularDenoiser,
    planner: &PositionPlanner,
    tau: f64,
    x0: &Sequence,
    samples: usize,
    seed: u64,
) -> Result<SoftmaxElbo> {
    if samples < 2 {
        return Err(Error::InvalidParameter("Monte Carlo needs at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum1, mut sum2, mut sum_sq) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let mut x = den.vocab().all_masked(den.len());
        let (mut p1, mut p2) = (0.0, 0.0);
        for _ in 0..den.len() {
            let view = MaskedView::new(den, &x);
            let n = view.len();
            let weights = reference_weights(den, planner, x0, &x);
            let base: Vec<f64> = (0..n).map(|s| view.log_prob(s, x0.get(view.masked[s]))).collect();
            let mut scratch = vec![0.0; n];
            let log_c0 = log_normalizer(&base, tau, &mut scratch);
            // one candidate draw per step is an unbiased estimate of the
            // z-expectation
            let drawn: Vec<f64> = (0..n)
                .map(|s| view.log_prob(s, sample_index(view.probs_row(s), &mut rng) as Token + 1))
                .collect();
            let mut log_conf = drawn.clone();
            for (slot, &(_, g)) in weights.iter().enumerate() {
                p1 += g * base[slot];
                log_conf[slot] = base[slot];
                p2 += g * (log_c0 - log_normalizer(&log_conf, tau, &mut scratch));
                log_conf[slot] = drawn[slot];
            }
            let w: Vec<f64> = weights.iter().map(|&(_, w)| w).collect();
            let (i, _) = weights[sample_index(&w, &mut rng)];
            x.set(i, x0.get(i));
        }
        sum1 += p1;
        sum2 += p2;
        sum_sq += (p1 + p2) * (p1 + p2);
    }
    let n = samples as f64;
    let (e1, correction) = (sum1 / n, sum2 / n);
    let mean = e1 + correction;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(SoftmaxElbo {
        e1,
        correction,
        total: mean,
        std_err: (var / n).sqrt(),
    })
}

/// A bound paired with the sampler it bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "bound", rename_all = "snake_case")]
pub enum BoundKind {
    /// Standard masked-diffusion bound against the vanilla sampler.
    Uniform,
    /// Planner-aware bound against the sampler guided by `planner`.
    Planned { planner: PositionPlanner },
    Greedy,
    Softmax { tau: f64 },
    #[serde(rename = "p2_topk")]
    P2TopK { eta: f64 },
}

impl BoundKind {
    pub fn name(&self) -> String {
        match self {
            BoundKind::Uniform => "uniform".into(),
            BoundKind::Planned { planner } => format!("planned[{}]", planner.name()),
            BoundKind::Greedy => "greedy".into(),
            BoundKind::Softmax { tau } => format!("softmax(tau={tau})"),
            BoundKind::P2TopK { eta } => format!("p2_topk(eta={eta})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ElboReport {
    pub kind: BoundKind,
    pub bound: f64,
    pub exact_log_marginal: f64,
    /// `exact_log_marginal - bound`.
    pub gap: f64,
    pub mode: EvalMode,
    pub std_err: f64,
}

impl ElboReport {
    pub fn new(kind: BoundKind, bound: f64, exact_log_marginal: f64, mode: EvalMode, std_err: f64) -> Self {
        Self {
            kind,
            bound,
            exact_log_marginal,
            gap: exact_log_marginal - bound,
            mode,
            std_err,
        }
    }

    /// Whether the bound holds: `gap >= -tol` in exact mode, `gap >= -5·SE`
    /// (plus `tol`) in Monte Carlo mode.
    pub fn holds(&self, tol: f64) -> bool {
        self.gap >= -(tol + 5.0 * self.std_err)
    }
}

/// Evaluates a bound in exact mode together with the exact log-probability
/// the matching sampler assigns to `x0`.
pub fn evaluate_bound(den: &TabularDenoiser, x0: &Sequence, kind: &BoundKind, jobs: usize) -> Result<ElboReport> {
    let (bound, log_p) = match *kind {
        BoundKind::Uniform => (
            elbo_uniform_timestep_form(den, x0)?,
            exact_terminal_distribution(den, &PositionPlanner::Uniform, jobs)?.log_prob(x0),
        ),
        BoundKind::Planned { planner } => (
            p_elbo(den, &planner, x0, EvalMode::Exact)?.total,
            exact_terminal_distribution(den, &planner, jobs)?.log_prob(x0),
        ),
        BoundKind::Greedy => (
            elbo_greedy(den, x0)?.value,
            exact_terminal_distribution(den, &PositionPlanner::Greedy, jobs)?.log_prob(x0),
        ),
        BoundKind::Softmax { tau } => (
            elbo_softmax(den, tau, x0, EvalMode::Exact)?.total,
            exact_terminal_distribution(den, &PositionPlanner::soft_greedy(tau)?, jobs)?.log_prob(x0),
        ),
        BoundKind::P2TopK { eta } => {
            let planner = SetPlanner::P2TopK { eta };
            (
                elbo_p2_topk(den, &planner, x0)?.value,
                exact_terminal_distribution_p2(den, &planner)?.log_prob(x0),
            )
        }
    };
    Ok(ElboReport::new(*kind, bound, log_p, EvalMode::Exact, 0.0))
}

/// Masking schedule `α(t)`, the probability a coordinate is still clean at
/// time `t`, with `α(0) = 1` and `α(1) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Linear,
    Cosine,
    /// `α(t) = 1 - t^power`.
    Polynomial { power: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Polynomial { power } if !(power > 0.0 && power.is_finite()) => Err(Error::InvalidParameter(
                format!("polynomial schedule needs a positive power, got {power}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match *self {
            Schedule::Linear => 1.0 - t,
            Schedule::Cosine => (std::f64::consts::FRAC_PI_2 * t).cos(),
            Schedule::Polynomial { power } => 1.0 - t.powf(power),
        }
    }

    pub fn alpha_derivative(&self, t: f64) -> f64 {
        match *self {
            Schedule::Linear => -1.0,
            Schedule::Cosine => -std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * t).sin(),
            Schedule::Polynomial { power } => -power * t.powf(power - 1.0),
        }
    }

    /// Masking rate `β_t = -α'(t)/α(t)`.
    pub fn rate(&self, t: f64) -> f64 {
        -self.alpha_derivative(t) / self.alpha(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BetaCheck {
    pub len: usize,
    pub k: usize,
    /// `∫_0^1 β_t α_t^k (1-α_t)^{L-k} dt` by quadrature.
    pub lhs: f64,
    /// `1/(k·C(L,k))`.
    pub rhs: f64,
    pub abs_error: f64,
    pub quadrature_error: f64,
}

pub fn beta_identity_check(len: usize, k: usize, schedule: &Schedule) -> Result<BetaCheck> {
    schedule.validate()?;
    if len == 0 || k == 0 || k > len {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= L, got k={k}, L={len}")));
    }
    let integrand = |t: f64| {
        let a = schedule.alpha(t);
        schedule.rate(t) * a.powi(k as i32) * (1.0 - a).powi((len - k) as i32)
    };
    let q = integrate(integrand, 0.0, 1.0, 1e-13)?;
    let rhs = 1.0 / (k as f64 * binomial(len, k) as f64);
    Ok(BetaCheck {
        len,
        k,
        lhs: q.value,
        rhs,
        abs_error: (q.value - rhs).abs(),
        quadrature_error: q.error,
    })
}

/// Two-position, two-token instance on which greedy decoding assigns the
/// datum `(1, 1)` less probability than the standard bound claims.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterexampleReport {
    /// `Cat(1; ·)` at `D^1(m,m)`, `D^2(m,m)`, `D^1(m,1)`, `D^1(m,2)`,
    /// `D^2(1,m)`, `D^2(2,m)`.
    pub c: [f64; 6],
    pub elbo_uniform: f64,
    pub exp_elbo_uniform: f64,
    /// Exact greedy-sampler probability of `(1,1)` by path enumeration.
    pub p_greedy: f64,
    pub log_p_greedy: f64,
    /// Effective planner values at the all-mask state for token 1 at
    /// positions 1 and 2.
    pub f_first: f64,
    pub f_second: f64,
    /// Closed form `c2·c3·(1-c1)` used by the hand derivation.
    pub hand_p_greedy: f64,
    /// `(1-c1)² c2 c3` and `c1 c5`: the squared comparison of the hand
    /// derivation (9/128 against 16/128 at the default constants).
    pub hand_lhs: f64,
    pub hand_rhs: f64,
    /// `log p_greedy < elbo_uniform`: the standard bound fails for greedy.
    pub bound_violated: bool,
    pub margin: f64,
}

pub const COUNTEREXAMPLE_CONSTANTS: [f64; 6] = [0.25, 0.5, 0.25, 0.5, 0.5, 0.5];

pub fn counterexample_denoiser(c: [f64; 6]) -> Result<TabularDenoiser> {
    let vocab = Vocab::new(3)?;
    let states = [("mm", 0), ("mm", 1), ("m1", 0), ("m2", 0), ("1m", 1), ("2m", 1)];
    let entries = states
        .iter()
        .zip(c)
        .map(|(&(s, i), c)| Ok((vocab.parse(s)?, i, vec![c, 1.0 - c])))
        .collect::<Result<Vec<_>>>()?;
    TabularDenoiser::from_table(vocab, 2, entries)
}

pub fn counterexample_prop1(c: [f64; 6]) -> Result<CounterexampleReport> {
    counterexample_report(&counterexample_denoiser(c)?)
}

/// Counterexample quantities for any two-position, two-token denoiser; the
/// constants are read back from its table.
pub fn counterexample_report(den: &TabularDenoiser) -> Result<CounterexampleReport> {
    let vocab = den.vocab();
    if vocab.size() != 3 || den.len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "counterexample needs d=3, L=2, got d={}, L={}",
            vocab.size(),
            den.len()
        )));
    }
    let at = |s: &str, i: usize| -> Result<f64> { Ok(den.prob(&vocab.parse(s)?, i, 1)) };
    let c = [at("mm", 0)?, at("mm", 1)?, at("m1", 0)?, at("m2", 0)?, at("1m", 1)?, at("2m", 1)?];
    let x0 = vocab.parse("11")?;
    let mm = vocab.parse("mm")?;
    let elbo_uniform = elbo_uniform_permutation_form(den, &x0)?;
    let p_greedy = exact_terminal_distribution(den, &PositionPlanner::Greedy, 1)?.prob(&x0);
    let f = |i| effective_planner_f(den, &PositionPlanner::Greedy, &mm, 1, i, EvalMode::Exact).map(|e| e.value);
    let log_p_greedy = p_greedy.ln();
    Ok(CounterexampleReport {
        c,
        elbo_uniform,
        exp_elbo_uniform: elbo_uniform.exp(),
        p_greedy,
        log_p_greedy,
        f_first: f(0)?,
        f_second: f(1)?,
        hand_p_greedy: c[1] * c[2] * (1.0 - c[0]),
        hand_lhs: (1.0 - c[0]).powi(2) * c[1] * c[2],
        hand_rhs: c[0] * c[4],
        bound_violated: log_p_greedy < elbo_uniform,
        margin: elbo_uniform - log_p_greedy,
    })
}

/// Random clean datum of the denoiser's shape.
pub fn random_datum<R: Rng + ?Sized>(vocab: Vocab, len: usize, rng: &mut R) -> Sequence {
    let tokens: Vec<Token> = (0..len).map(|_| rng.random_range(1..vocab.mask())).collect();
    vocab.sequence(tokens).expect("clean tokens")
}
