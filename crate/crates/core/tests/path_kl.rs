mod common;

use papl_core::chains::{propagate, DenseKernel};
use papl_core::{kl_categorical, path_kl, KlValue};
use rand::Rng;

fn random_simplex<R: Rng>(n: usize, sparse: bool, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    if sparse {
        let keep = rng.random_range(0..n);
        for (j, x) in v.iter_mut().enumerate() {
            if j != keep && rng.random_bool(0.4) {
                *x = 0.0;
            }
        }
    }
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

fn random_kernel<R: Rng>(n: usize, steps: usize, sparse: bool, rng: &mut R) -> DenseKernel {
    let matrices = (0..steps)
        .map(|_| (0..n).flat_map(|_| random_simplex(n, sparse, rng)).collect())
        .collect();
    DenseKernel::new(n, matrices).unwrap()
}

/// `Σ_paths P(path) log(P(path)/Q(path))` by enumerating every state sequence.
fn joint_kl(n: usize, steps: usize, p0: &[f64], p: &DenseKernel, q0: &[f64], q: &DenseKernel) -> f64 {
    let mut total = 0.0;
    let paths = n.pow(steps as u32 + 1);
    for code in 0..paths {
        let mut states = Vec::with_capacity(steps + 1);
        let mut c = code;
        for _ in 0..=steps {
            states.push(c % n);
            c /= n;
        }
        let mut pp = p0[states[0]];
        let mut qq = q0[states[0]];
        for k in 0..steps {
            pp *= p.prob(k, states[k], states[k + 1]);
            qq *= q.prob(k, states[k], states[k + 1]);
        }
        if pp > 0.0 {
            total += if qq > 0.0 { pp * (pp / qq).ln() } else { f64::INFINITY };
        }
    }
    total
}

#[test]
fn chain_rule_matches_joint_enumeration() {
    let mut rng = common::rng(5);
    for _ in 0..100 {
        let n = rng.random_range(2..=4);
        let steps = rng.random_range(2..=3);
        let p0 = random_simplex(n, false, &mut rng);
        let q0 = random_simplex(n, false, &mut rng);
        let p = random_kernel(n, steps, false, &mut rng);
        let q = random_kernel(n, steps, false, &mut rng);
        let joint = joint_kl(n, steps, &p0, &p, &q0, &q);
        let chain = path_kl(&p0, &p, &q0, &q, steps);
        assert!((chain.value() - joint).abs() < 1e-9, "{} vs {joint}", chain.value());
        // marginalization can only lose information
        let pt = propagate(&p, &p0, steps).pop().unwrap();
        let qt = propagate(&q, &q0, steps).pop().unwrap();
        assert!(kl_categorical(&pt, &qt).value() <= chain.value() + 1e-12);
    }
}

#[test]
fn support_violations_are_infinite_in_both_routes() {
    let mut rng = common::rng(6);
    let mut seen = 0;
    for _ in 0..200 {
        let n = 3;
        let steps = 2;
        let p0 = random_simplex(n, false, &mut rng);
        let p = random_kernel(n, steps, false, &mut rng);
        let q = random_kernel(n, steps, true, &mut rng);
        let joint = joint_kl(n, steps, &p0, &p, &p0, &q);
        let chain = path_kl(&p0, &p, &p0, &q, steps);
        assert_eq!(joint.is_infinite(), !chain.is_finite());
        if let KlValue::Infinite(v) = chain {
            assert!(v.step.is_some());
            seen += 1;
        } else {
            assert!((chain.value() - joint).abs() < 1e-9);
        }
    }
    assert!(seen > 0);
}
