use std::time::Instant;

use papl_core::elbo::{counterexample_denoiser, counterexample_report, CounterexampleReport};
use serde::Serialize;

use super::load_table;
use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, fraction, write_json};
use crate::Verdict;

#[derive(Serialize)]
struct Report<'a> {
    #[serde(flatten)]
    exact: &'a CounterexampleReport,
    exp_elbo_uniform_over_128: String,
    hand_lhs_over_128: String,
    hand_rhs_over_128: String,
    hand_p_greedy_over_32: String,
    p_greedy_over_32: String,
    hand_value_matches_exact: bool,
}

pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<Verdict> {
    let start = Instant::now();
    let den = match &cfg.counterexample.table {
        Some(path) => load_table(path)?,
        None => counterexample_denoiser(cfg.counterexample.constants)?,
    };
    let r = counterexample_report(&den)?;
    let report = Report {
        exact: &r,
        exp_elbo_uniform_over_128: fraction(r.exp_elbo_uniform, 128),
        hand_lhs_over_128: fraction(r.hand_lhs, 128),
        hand_rhs_over_128: fraction(r.hand_rhs, 128),
        hand_p_greedy_over_32: fraction(r.hand_p_greedy, 32),
        p_greedy_over_32: fraction(r.p_greedy, 32),
        hand_value_matches_exact: (r.hand_p_greedy - r.p_greedy).abs() <= 1e-12,
    };
    ensure_dir(&cfg.out)?;
    let path = write_json(&cfg.out.join("counterexample.json"), &report)?;
    println!("constants c1..c6        {:?}", r.c);
    println!("exp(uniform bound)      {} ({})", r.exp_elbo_uniform, report.exp_elbo_uniform_over_128);
    println!("hand comparison         {} < {}", report.hand_lhs_over_128, report.hand_rhs_over_128);
    println!("hand greedy probability {} ({})", r.hand_p_greedy, report.hand_p_greedy_over_32);
    println!("exact greedy probability {} ({})", r.p_greedy, report.p_greedy_over_32);
    println!("F at (m,m) for token 1  position 1: {}, position 2: {}", r.f_first, r.f_second);
    println!(
        "uniform bound - log p_greedy = {} -> {}",
        r.margin,
        if r.bound_violated { "standard bound fails for greedy" } else { "no violation" }
    );
    println!("report {} ({:.3} s)", path.display(), start.elapsed().as_secs_f64());
    Ok(Verdict::from_pass(r.bound_violated))
}
