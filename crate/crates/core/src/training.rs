//! Training losses for the tabular denoiser, their analytic gradients, and an
//! SGD loop with exact evaluation metrics.

use std::collections::VecDeque;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chains::exact_terminal_distribution;
use crate::data::DataDistribution;
use crate::denoiser::{softmax_into, TabularDenoiser};
use crate::elbo::{elbo_uniform_timestep_form, p_elbo};
use crate::error::{Error, Result};
use crate::planners::{EvalMode, PositionPlanner};
use crate::sequence::Sequence;

/// One training example: a datum, the step `k`, and a state with `L - k`
/// masked positions that agrees with the datum elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x0: Sequence,
    pub k: usize,
    pub xk: Sequence,
}

impl Example {
    pub fn new(x0: Sequence, xk: Sequence) -> Result<Self> {
        x0.ensure_clean()?;
        xk.ensure_len(x0.len())?;
        xk.ensure_has_mask()?;
        for i in 0..x0.len() {
            if !xk.is_masked(i) && xk.get(i) != x0.get(i) {
                return Err(Error::InvalidParameter(format!(
                    "{xk} disagrees with {x0} at unmasked position {}",
                    i + 1
                )));
            }
        }
        let k = x0.len() - xk.num_masked();
        Ok(Self { x0, k, xk })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `-Σ_i (1/(L-k)) log Cat(x0^i; D^i(x_k))`.
    Vanilla,
    /// `-Σ_i ((1 + α w_i)/(L-k)) log Cat(x0^i; D^i(x_k))` with soft-greedy
    /// weights `w` at temperature `tau`.
    Papl { alpha: f64, tau: f64 },
    /// `-Σ_i w_i log Cat(x0^i; D^i(x_k))`.
    PurePlanner { tau: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        let tau_ok = |tau: f64| tau > 0.0 && tau.is_finite();
        match *self {
            LossKind::Vanilla => Ok(()),
            LossKind::Papl { alpha, tau } if alpha >= 0.0 && alpha.is_finite() && tau_ok(tau) => Ok(()),
            LossKind::PurePlanner { tau } if tau_ok(tau) => Ok(()),
            other => Err(Error::InvalidParameter(format!(
                "loss {other:?} needs alpha >= 0 and tau > 0"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            LossKind::Vanilla => "vanilla".into(),
            LossKind::Papl { alpha, tau } => format!("papl(alpha={alpha},tau={tau})"),
            LossKind::PurePlanner { tau } => format!("pure(tau={tau})"),
        }
    }

    fn tau(&self) -> Option<f64> {
        match *self {
            LossKind::Vanilla => None,
            LossKind::Papl { tau, .. } | LossKind::PurePlanner { tau } => Some(tau),
        }
    }

    /// Per-position coefficient `c_i` and the scale `a` of the weight term
    /// (`c_i = base + a·w_i`).
    fn coefficients(&self, n: usize, w: &[f64], out: &mut [f64]) -> f64 {
        let inv = 1.0 / n as f64;
        match *self {
            LossKind::Vanilla => {
                out.fill(inv);
                0.0
            }
            LossKind::Papl { alpha, .. } => {
                for (c, wi) in out.iter_mut().zip(w) {
                    *c = (1.0 + alpha * wi) * inv;
                }
                alpha * inv
            }
            LossKind::PurePlanner { .. } => {
                out.copy_from_slice(w);
                1.0
            }
        }
    }
}

/// Masked positions, their log-confidences in the datum, and the planner
/// weights of one example.
struct Terms {
    masked: Vec<usize>,
    log_conf: Vec<f64>,
    weights: Vec<f64>,
}

fn terms(den: &TabularDenoiser, weight_den: &TabularDenoiser, kind: &LossKind, ex: &Example) -> Terms {
    let masked = ex.xk.masked_positions();
    let log_conf: Vec<f64> = masked.iter().map(|&i| den.log_prob(&ex.xk, i, ex.x0.get(i))).collect();
    let mut weights = vec![0.0; masked.len()];
    if let Some(tau) = kind.tau() {
        let scaled: Vec<f64> = masked
            .iter()
            .map(|&i| weight_den.log_prob(&ex.xk, i, ex.x0.get(i)) / tau)
            .collect();
        softmax_into(&scaled, &mut weights);
    }
    Terms {
        masked,
        log_conf,
        weights,
    }
}

fn check_batch(den: &TabularDenoiser, batch: &[Example]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    for ex in batch {
        ex.x0.ensure_len(den.len())?;
        if ex.x0.mask_token() != den.vocab().mask() {
            return Err(Error::InvalidParameter(format!("{} uses a different vocabulary", ex.x0)));
        }
    }
    Ok(())
}

/// Batch-mean loss where the planner weights are computed from `weight_den`
/// and the cross-entropy terms from `den`. Passing the same denoiser twice
/// gives the ordinary loss; a frozen copy as `weight_den` gives the loss whose
/// derivative is the detached gradient.
pub fn weighted_loss(den: &TabularDenoiser, weight_den: &TabularDenoiser, kind: &LossKind, batch: &[Example]) -> Result<f64> {
    kind.validate()?;
    check_batch(den, batch)?;
    let mut total = 0.0;
    for ex in batch {
        let t = terms(den, weight_den, kind, ex);
        let mut c = vec![0.0; t.masked.len()];
        kind.coefficients(t.masked.len(), &t.weights, &mut c);
        total -= c.iter().zip(&t.log_conf).map(|(c, l)| c * l).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

pub fn loss(den: &TabularDenoiser, kind: &LossKind, batch: &[Example]) -> Result<f64> {
    weighted_loss(den, den, kind, batch)
}

pub fn loss_vanilla(den: &TabularDenoiser, batch: &[Example]) -> Result<f64> {
    loss(den, &LossKind::Vanilla, batch)
}

pub fn loss_papl(den: &TabularDenoiser, batch: &[Example], alpha: f64, tau: f64) -> Result<f64> {
    loss(den, &LossKind::Papl { alpha, tau }, batch)
}

pub fn loss_pure_planner(den: &TabularDenoiser, batch: &[Example], tau: f64) -> Result<f64> {
    loss(den, &LossKind::PurePlanner { tau }, batch)
}

/// Loss value and its gradient with respect to every logit of `den`, laid out
/// like [`TabularDenoiser::params`]. With `detach` the planner weights are
/// constants; otherwise the gradient also flows through them.
pub fn loss_and_grad(den: &TabularDenoiser, kind: &LossKind, batch: &[Example], detach: bool) -> Result<(f64, Vec<f64>)> {
    kind.validate()?;
    check_batch(den, batch)?;
    let nc = den.vocab().num_clean();
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; den.params().len()];
    let mut probs = vec![0.0; nc];
    let mut total = 0.0;
    for ex in batch {
        let t = terms(den, den, kind, ex);
        let n = t.masked.len();
        let mut c = vec![0.0; n];
        let a = kind.coefficients(n, &t.weights, &mut c);
        total -= c.iter().zip(&t.log_conf).map(|(c, l)| c * l).sum::<f64>();
        // d loss / d log_conf_i
        let mut upstream: Vec<f64> = c.iter().map(|c| -c).collect();
        if !detach && a != 0.0 {
            let tau = kind.tau().expect("weighted loss has a temperature");
            let mean: f64 = t.weights.iter().zip(&t.log_conf).map(|(w, l)| w * l).sum();
            for (s, u) in upstream.iter_mut().enumerate() {
                *u -= a / tau * t.weights[s] * (t.log_conf[s] - mean);
            }
        }
        for (s, &i) in t.masked.iter().enumerate() {
            let off = den.offset(&ex.xk, i);
            softmax_into(den.logits(&ex.xk, i), &mut probs);
            let target = ex.x0.get(i) as usize - 1;
            // d log_conf / d logit_c = 1[c = target] - p_c
            for (cidx, p) in probs.iter().enumerate() {
                let onehot = if cidx == target { 1.0 } else { 0.0 };
                grad[off + cidx] += scale * upstream[s] * (onehot - p);
            }
        }
    }
    Ok((total * scale, grad))
}

/// Detached-weight gradient, `weight·(softmax − onehot)` per touched entry.
pub fn grad_analytic(den: &TabularDenoiser, kind: &LossKind, batch: &[Example]) -> Result<Vec<f64>> {
    loss_and_grad(den, kind, batch, true).map(|(_, g)| g)
}

/// Draws `x0 ∼ p_data`, `k ∼ U{0..L-1}`, and `x_k` uniform among the states
/// that mask `L - k` positions of `x0`.
pub fn sample_example<R: Rng + ?Sized>(data: &DataDistribution, rng: &mut R) -> Example {
    let x0 = data.sample(rng).clone();
    let len = x0.len();
    let k = rng.random_range(0..len);
    let mut xk = x0.clone();
    for i in sample_indices(rng, len, len - k) {
        xk = xk.with_masked(i);
    }
    Example { x0, k, xk }
}

pub fn sample_batch<R: Rng + ?Sized>(data: &DataDistribution, size: usize, rng: &mut R) -> Vec<Example> {
    (0..size).map(|_| sample_example(data, rng)).collect()
}

fn default_detach() -> bool {
    true
}

fn default_window() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    #[serde(default = "default_detach")]
    pub detach_planner_weights: bool,
    /// Trailing window for the loss variance metric.
    #[serde(default = "default_window")]
    pub loss_window: usize,
}

impl TrainConfig {
    pub fn new(loss: LossKind, learning_rate: f64, steps: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            loss,
            learning_rate,
            steps,
            batch_size,
            seed,
            eval_every: steps.max(1),
            detach_planner_weights: true,
            loss_window: default_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.loss_window == 0 {
            return Err(Error::InvalidParameter(
                "batch_size, eval_every and loss_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluation row. KLs are `KL(p_data ‖ p_θ)` for the vanilla and greedy
/// samplers; the bounds are averaged over `p_data`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainMetrics {
    pub step: usize,
    pub loss: f64,
    pub kl_uniform: f64,
    pub kl_greedy: f64,
    pub elbo_uniform: f64,
    /// Planner-aware bound with the greedy planner.
    pub p_elbo: f64,
    pub grad_norm: f64,
    pub loss_var: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub denoiser: TabularDenoiser,
    pub history: Vec<TrainMetrics>,
}

impl TrainRun {
    pub fn last(&self) -> Option<&TrainMetrics> {
        self.history.last()
    }
}

/// Exact evaluation of a snapshot against the data distribution.
pub fn evaluate(den: &TabularDenoiser, data: &DataDistribution, jobs: usize) -> Result<(f64, f64, f64, f64)> {
    let unif = exact_terminal_distribution(den, &PositionPlanner::Uniform, jobs)?;
    let greedy = exact_terminal_distribution(den, &PositionPlanner::Greedy, jobs)?;
    let kl_uniform = data.kl_to(|x| unif.prob(x)).value();
    let kl_greedy = data.kl_to(|x| greedy.prob(x)).value();
    let (mut elbo, mut pelbo) = (0.0, 0.0);
    for (x0, p) in data.iter() {
        elbo += p * elbo_uniform_timestep_form(den, x0)?;
        pelbo += p * p_elbo(den, &PositionPlanner::Greedy, x0, EvalMode::Exact)?.total;
    }
    Ok((kl_uniform, kl_greedy, elbo, pelbo))
}

fn variance(values: &VecDeque<f64>) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Plain SGD on the chosen loss, evaluating every `eval_every` steps and at
/// the last step.
pub fn train(initial: &TabularDenoiser, data: &DataDistribution, config: &TrainConfig, jobs: usize) -> Result<TrainRun> {
    config.validate()?;
    if data.vocab() != initial.vocab() || data.len() != initial.len() {
        return Err(Error::InvalidParameter("data and denoiser shapes differ".into()));
    }
    let mut den = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut window = VecDeque::with_capacity(config.loss_window);
    let mut history = Vec::new();
    for step in 1..=config.steps {
        let batch = sample_batch(data, config.batch_size, &mut rng);
        let (value, grad) = loss_and_grad(&den, &config.loss, &batch, config.detach_planner_weights)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !value.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {value}, gradient norm {grad_norm} under {}", config.loss.name()),
            });
        }
        for (p, g) in den.params_mut().iter_mut().zip(&grad) {
            *p -= config.learning_rate * g;
        }
        if window.len() == config.loss_window {
            window.pop_front();
        }
        window.push_back(value);
        if step % config.eval_every == 0 || step == config.steps {
            let (kl_uniform, kl_greedy, elbo_uniform, p_elbo) = evaluate(&den, data, jobs)?;
            history.push(TrainMetrics {
                step,
                loss: value,
                kl_uniform,
                kl_greedy,
                elbo_uniform,
                p_elbo,
                grad_norm,
                loss_var: variance(&window),
            });
        }
    }
    Ok(TrainRun { denoiser: den, history })
}
