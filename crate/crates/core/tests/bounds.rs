mod common;

use common::instance;
use papl_core::chains::{ModelKernel, P2ModelKernel, P2ReferenceKernel, ReferenceKernel, SequenceSpace};
use papl_core::chains::chain_elbo;
use papl_core::{
    elbo_greedy, elbo_p2_topk, elbo_softmax, elbo_uniform_permutation_form, elbo_uniform_timestep_form,
    evaluate_bound, exact_terminal_distribution, p_elbo, BoundKind, EvalMode, PositionPlanner, SetPlanner,
};

const TOL: f64 = 1e-8;

fn kinds(len: usize) -> Vec<BoundKind> {
    let mut out = vec![
        BoundKind::Uniform,
        BoundKind::Planned {
            planner: PositionPlanner::SoftGreedy { tau: 0.5 },
        },
        BoundKind::Planned {
            planner: PositionPlanner::Greedy,
        },
        BoundKind::Greedy,
        BoundKind::Softmax { tau: 0.25 },
        BoundKind::Softmax { tau: 4.0 },
    ];
    if len <= 3 {
        out.extend([BoundKind::P2TopK { eta: 0.0 }, BoundKind::P2TopK { eta: 1.0 }, BoundKind::P2TopK { eta: 5.0 }]);
    }
    out
}

#[test]
fn every_bound_is_below_its_exact_log_marginal() {
    for len in 1..=4 {
        for seed in 0..12 {
            let (den, x0) = instance(1000 * len as u64 + seed, 3, len);
            for kind in kinds(len) {
                let r = evaluate_bound(&den, &x0, &kind, 1).unwrap();
                assert!(r.holds(TOL), "{} L={len} seed={seed}: bound {} > log p {}", kind.name(), r.bound, r.exact_log_marginal);
            }
        }
    }
}

#[test]
fn single_position_bounds_are_tight() {
    for seed in 0..5 {
        let (den, x0) = instance(seed, 3, 1);
        for kind in kinds(1) {
            let r = evaluate_bound(&den, &x0, &kind, 1).unwrap();
            assert!(r.gap.abs() < 1e-12, "{}: gap {}", kind.name(), r.gap);
        }
    }
}

#[test]
fn uniform_planner_recovers_standard_bound() {
    for seed in 0..20 {
        let (den, x0) = instance(seed, 3, 3);
        let b = p_elbo(&den, &PositionPlanner::Uniform, &x0, EvalMode::Exact).unwrap();
        assert_eq!(b.e2, 0.0);
        assert!((b.total - elbo_uniform_timestep_form(&den, &x0).unwrap()).abs() < 1e-10);
        assert!((b.total - elbo_uniform_permutation_form(&den, &x0).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn planned_bound_is_the_negative_path_kl() {
    // Independent route: chain-rule KL between the reference and model kernels.
    for seed in 0..10 {
        let (den, x0) = instance(50 + seed, 3, 3);
        let space = SequenceSpace::of(&den);
        for planner in [PositionPlanner::Uniform, PositionPlanner::Greedy, PositionPlanner::SoftGreedy { tau: 0.7 }] {
            let reference = ReferenceKernel {
                den: &den,
                planner,
                x0: x0.clone(),
            };
            let model = ModelKernel { den: &den, planner };
            let via_kl = chain_elbo(&space.initial(), &reference, &model, 3);
            let b = p_elbo(&den, &planner, &x0, EvalMode::Exact).unwrap();
            assert!((via_kl - b.total).abs() < 1e-10, "{}: {via_kl} vs {}", planner.name(), b.total);
        }
    }
}

#[test]
fn greedy_and_p2_bounds_sit_below_their_path_bounds() {
    for seed in 0..10 {
        let (den, x0) = instance(80 + seed, 3, 3);
        let space = SequenceSpace::of(&den);
        let greedy_path = p_elbo(&den, &PositionPlanner::Greedy, &x0, EvalMode::Exact).unwrap().total;
        assert!(elbo_greedy(&den, &x0).unwrap().value <= greedy_path + 1e-12);
        for eta in [0.0, 1.0, 5.0] {
            let planner = SetPlanner::P2TopK { eta };
            let reference = P2ReferenceKernel {
                den: &den,
                planner,
                x0: x0.clone(),
            };
            let model = P2ModelKernel { den: &den, planner };
            let path = chain_elbo(&space.initial(), &reference, &model, 3);
            assert!(elbo_p2_topk(&den, &planner, &x0).unwrap().value <= path + 1e-12);
        }
    }
}

#[test]
fn p2_with_small_boost_follows_the_greedy_path() {
    // With η ≤ 1 every masked score η·Cat is below the held tokens' score 1,
    // so nothing is remasked and the kept set grows by the greedy choice.
    for seed in 0..30 {
        let (den, x0) = instance(200 + seed, 3, 3);
        let greedy = elbo_greedy(&den, &x0).unwrap();
        for eta in [0.5, 1.0] {
            let p2 = elbo_p2_topk(&den, &SetPlanner::P2TopK { eta }, &x0).unwrap();
            assert!((p2.value - greedy.value).abs() < 1e-12);
        }
    }
}

#[test]
fn p2_without_boost_decodes_left_to_right() {
    // η = 0 zeroes every masked score; ties go to the lowest index.
    for seed in 0..10 {
        let (den, x0) = instance(250 + seed, 3, 3);
        let p2 = elbo_p2_topk(&den, &SetPlanner::P2TopK { eta: 0.0 }, &x0).unwrap();
        assert_eq!(p2.path, vec![vec![0], vec![0, 1], vec![0, 1, 2]]);
    }
}

#[test]
fn softmax_bound_approaches_uniform_bound() {
    for seed in 0..5 {
        let (den, x0) = instance(300 + seed, 3, 3);
        let s = elbo_softmax(&den, 1e6, &x0, EvalMode::Exact).unwrap();
        let u = elbo_uniform_timestep_form(&den, &x0).unwrap();
        assert!((s.total - u).abs() < 1e-4);
    }
}

#[test]
fn counterexample_instance_violates_the_standard_bound_for_greedy() {
    let den = papl_core::elbo::counterexample_denoiser(papl_core::elbo::COUNTEREXAMPLE_CONSTANTS).unwrap();
    let x0 = den.vocab().parse("11").unwrap();
    let log_p = exact_terminal_distribution(&den, &PositionPlanner::Greedy, 1).unwrap().log_prob(&x0);
    let standard = elbo_uniform_timestep_form(&den, &x0).unwrap();
    assert!(standard > log_p);
    // the planner-aware bounds still hold
    assert!(elbo_greedy(&den, &x0).unwrap().value <= log_p);
    assert!(p_elbo(&den, &PositionPlanner::Greedy, &x0, EvalMode::Exact).unwrap().total <= log_p + 1e-15);
}
