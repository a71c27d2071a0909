mod common;

use papl_core::training::{sample_batch, weighted_loss};
use papl_core::{loss, loss_and_grad, Example, LossKind, TabularDenoiser, Vocab};

const EPS: f64 = 1e-5;

fn kinds() -> [LossKind; 3] {
    [
        LossKind::Vanilla,
        LossKind::Papl { alpha: 1.5, tau: 0.8 },
        LossKind::PurePlanner { tau: 0.6 },
    ]
}

fn setup(seed: u64) -> (TabularDenoiser, Vec<Example>) {
    let mut rng = common::rng(seed);
    let v = Vocab::new(3).unwrap();
    let den = TabularDenoiser::random(v, 3, 1.0, &mut rng).unwrap();
    let data = common::random_data(seed + 7, 3, 3, 3);
    let batch = sample_batch(&data, 6, &mut rng);
    (den, batch)
}

/// Central differences of `f` over every logit.
fn finite_difference(den: &TabularDenoiser, f: impl Fn(&TabularDenoiser) -> f64) -> Vec<f64> {
    let mut probe = den.clone();
    (0..den.params().len())
        .map(|j| {
            let orig = probe.params()[j];
            probe.params_mut()[j] = orig + EPS;
            let up = f(&probe);
            probe.params_mut()[j] = orig - EPS;
            let down = f(&probe);
            probe.params_mut()[j] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// Test-side loss from the denoiser's probabilities and the loss definitions.
fn oracle_loss(den: &TabularDenoiser, kind: &LossKind, batch: &[Example]) -> f64 {
    let mut total = 0.0;
    for ex in batch {
        let masked = ex.xk.masked_positions();
        let n = masked.len() as f64;
        let conf: Vec<f64> = masked.iter().map(|&i| den.prob(&ex.xk, i, ex.x0.get(i))).collect();
        let w = |tau: f64| {
            let e: Vec<f64> = conf.iter().map(|c| c.powf(1.0 / tau)).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let coeff: Vec<f64> = match *kind {
            LossKind::Vanilla => vec![1.0 / n; masked.len()],
            LossKind::Papl { alpha, tau } => w(tau).iter().map(|wi| (1.0 + alpha * wi) / n).collect(),
            LossKind::PurePlanner { tau } => w(tau),
        };
        total -= coeff.iter().zip(&conf).map(|(c, p)| c * p.ln()).sum::<f64>();
    }
    total / batch.len() as f64
}

#[test]
fn loss_values_match_oracle() {
    for seed in 0..20 {
        let (den, batch) = setup(seed);
        for kind in kinds() {
            let a = loss(&den, &kind, &batch).unwrap();
            let b = oracle_loss(&den, &kind, &batch);
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "{}: {a} vs {b}", kind.name());
        }
    }
}

#[test]
fn detached_gradient_matches_finite_differences() {
    for seed in 0..50 {
        let (den, batch) = setup(seed);
        for kind in kinds() {
            let (_, g) = loss_and_grad(&den, &kind, &batch, true).unwrap();
            let fd = finite_difference(&den, |d| weighted_loss(d, &den, &kind, &batch).unwrap());
            let err = relative_error(&g, &fd);
            assert!(err <= 1e-6, "{} seed {seed}: {err}", kind.name());
        }
    }
}

#[test]
fn full_gradient_matches_finite_differences() {
    for seed in 0..50 {
        let (den, batch) = setup(seed);
        for kind in kinds() {
            let (_, g) = loss_and_grad(&den, &kind, &batch, false).unwrap();
            let fd = finite_difference(&den, |d| loss(d, &kind, &batch).unwrap());
            let err = relative_error(&g, &fd);
            assert!(err <= 1e-6, "{} seed {seed}: {err}", kind.name());
        }
    }
}

#[test]
fn detaching_drops_only_the_weight_path() {
    // The weight path alone: perturb the denoiser that produces the weights
    // while the cross-entropy terms stay at the original logits.
    for seed in 0..10 {
        let (den, batch) = setup(seed);
        for kind in kinds() {
            let (_, detached) = loss_and_grad(&den, &kind, &batch, true).unwrap();
            let (_, full) = loss_and_grad(&den, &kind, &batch, false).unwrap();
            let weight_path = finite_difference(&den, |d| weighted_loss(&den, d, &kind, &batch).unwrap());
            let sum: Vec<f64> = detached.iter().zip(&weight_path).map(|(a, b)| a + b).collect();
            assert!(relative_error(&full, &sum) <= 1e-6 || full.iter().zip(&sum).all(|(a, b)| (a - b).abs() < 1e-10));
            if kind == LossKind::Vanilla {
                assert!(weight_path.iter().all(|g| *g == 0.0));
            }
        }
    }
}

#[test]
fn papl_gradient_is_vanilla_plus_weighted_term() {
    for seed in 0..20 {
        let (den, batch) = setup(seed);
        let alpha = 2.5;
        let tau = 0.9;
        let (_, van) = loss_and_grad(&den, &LossKind::Vanilla, &batch, true).unwrap();
        let (_, papl) = loss_and_grad(&den, &LossKind::Papl { alpha, tau }, &batch, true).unwrap();
        // extra term: weights α·w_i/(L-k), built from single-example pure gradients
        let mut extra = vec![0.0; van.len()];
        for ex in &batch {
            let n = ex.xk.num_masked() as f64;
            let (_, g) = loss_and_grad(&den, &LossKind::PurePlanner { tau }, std::slice::from_ref(ex), true).unwrap();
            for (e, gi) in extra.iter_mut().zip(g) {
                *e += alpha / n * gi / batch.len() as f64;
            }
        }
        for ((p, v), e) in papl.iter().zip(&van).zip(&extra) {
            assert!((p - (v + e)).abs() < 1e-12);
        }
    }
}

#[test]
fn alpha_zero_equals_vanilla() {
    for seed in 0..20 {
        let (den, batch) = setup(seed);
        let van = loss_and_grad(&den, &LossKind::Vanilla, &batch, true).unwrap();
        let zero = loss_and_grad(&den, &LossKind::Papl { alpha: 0.0, tau: 1.0 }, &batch, true).unwrap();
        assert!((van.0 - zero.0).abs() <= 1e-12);
        assert!(van.1.iter().zip(&zero.1).all(|(a, b)| (a - b).abs() <= 1e-12));
    }
}

#[test]
fn perfect_fit_has_zero_vanilla_gradient() {
    let v = Vocab::new(3).unwrap();
    let x0 = v.parse("212").unwrap();
    let mut den = TabularDenoiser::uniform(v, 3).unwrap();
    for (s, i) in den.masked_entries() {
        den.logits_mut(&s, i)[x0.get(i) as usize - 1] = 800.0;
    }
    let batch: Vec<Example> = ["m1m", "2mm", "mmm"]
        .iter()
        .map(|s| Example::new(x0.clone(), v.parse(s).unwrap()).unwrap())
        .collect();
    let (l, g) = loss_and_grad(&den, &LossKind::Vanilla, &batch, true).unwrap();
    assert!(l.abs() < 1e-300);
    assert!(g.iter().all(|x| x.abs() < 1e-300));
}
