use std::time::Instant;

use papl_core::chains::{MAX_P2_LEN, MAX_P2_VOCAB};
use papl_core::elbo::random_datum;
use papl_core::par::map_indexed;
use papl_core::{evaluate_bound, p_elbo, BoundKind, EvalMode, PositionPlanner};
use serde::Serialize;

use super::denoisers;
use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, write_csv, write_json};
use crate::{Usage, Verdict};

#[derive(Clone, Debug, Serialize)]
struct Row {
    instance: usize,
    length: usize,
    datum: String,
    bound: String,
    value: f64,
    log_p: f64,
    gap: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Summary {
    rows: usize,
    failures: usize,
    min_gap: f64,
    tolerance: f64,
    /// Largest `|gap(planned[uniform]) - gap(uniform)|`.
    uniform_degeneracy_max_diff: f64,
    /// Largest `|E2|` of the uniform planner.
    uniform_mismatch_max_abs: f64,
    pass: bool,
}

fn kinds(cfg: &ExperimentConfig, len: usize) -> Vec<BoundKind> {
    let b = &cfg.bounds;
    let mut out = vec![
        BoundKind::Uniform,
        BoundKind::Planned {
            planner: PositionPlanner::Uniform,
        },
    ];
    out.extend(b.planners.iter().map(|&planner| BoundKind::Planned { planner }));
    out.push(BoundKind::Greedy);
    out.extend(b.softmax_taus.iter().map(|&tau| BoundKind::Softmax { tau }));
    if len <= b.p2_max_length {
        out.extend(b.p2_etas.iter().map(|&eta| BoundKind::P2TopK { eta }));
    }
    out
}

pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<Verdict> {
    let start = Instant::now();
    let b = &cfg.bounds;
    if b.p2_max_length > MAX_P2_LEN && b.lengths.iter().any(|&l| l > MAX_P2_LEN) && !b.p2_etas.is_empty() {
        return Err(papl_core::Error::Budget(format!("P2 bounds are evaluated for L <= {MAX_P2_LEN}")).into());
    }
    if cfg.problem.vocab_size > MAX_P2_VOCAB && !b.p2_etas.is_empty() && b.lengths.iter().any(|&l| l <= b.p2_max_length) {
        return Err(papl_core::Error::Budget(format!("P2 bounds are evaluated for d <= {MAX_P2_VOCAB}")).into());
    }
    if b.lengths.is_empty() || b.lengths.contains(&0) {
        return Err(Usage("bounds.lengths must be non-empty and positive".into()).into());
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut degeneracy: f64 = 0.0;
    let mut mismatch: f64 = 0.0;
    for &len in &b.lengths {
        let instances = denoisers(cfg, len, len as u64, b.instances)?;
        let jobs: Vec<_> = instances
            .into_iter()
            .map(|(den, mut rng)| {
                let x0 = random_datum(den.vocab(), len, &mut rng);
                (den, x0)
            })
            .collect();
        let kinds = kinds(cfg, len);
        let results = map_indexed(cfg.jobs, jobs.len(), |i| -> papl_core::Result<(Vec<Row>, f64, f64)> {
            let (den, x0) = &jobs[i];
            let mut out = Vec::with_capacity(kinds.len());
            for kind in &kinds {
                let r = evaluate_bound(den, x0, kind, 1)?;
                out.push(Row {
                    instance: i,
                    length: len,
                    datum: x0.to_string(),
                    bound: kind.name(),
                    value: r.bound,
                    log_p: r.exact_log_marginal,
                    gap: r.gap,
                    pass: r.gap >= -b.tolerance,
                });
            }
            let e2 = p_elbo(den, &PositionPlanner::Uniform, x0, EvalMode::Exact)?.e2.abs();
            let diff = (out[0].gap - out[1].gap).abs();
            Ok((out, diff, e2))
        });
        for r in results {
            let (out, diff, e2) = r?;
            degeneracy = degeneracy.max(diff);
            mismatch = mismatch.max(e2);
            rows.extend(out);
        }
    }
    let failures = rows.iter().filter(|r| !r.pass).count();
    let min_gap = rows.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
    let pass = failures == 0 && degeneracy <= b.degeneracy_tolerance && mismatch == 0.0;
    let summary = Summary {
        rows: rows.len(),
        failures,
        min_gap,
        tolerance: b.tolerance,
        uniform_degeneracy_max_diff: degeneracy,
        uniform_mismatch_max_abs: mismatch,
        pass,
    };
    ensure_dir(&cfg.out)?;
    let csv = write_csv(&cfg.out.join("bounds.csv"), &rows)?;
    write_json(&cfg.out.join("bounds_summary.json"), &summary)?;
    println!(
        "{} bound evaluations, {failures} violations beyond {:e}, min gap {min_gap:e}",
        rows.len(),
        b.tolerance
    );
    println!("uniform planner: max |gap diff| {degeneracy:e}, max |E2| {mismatch:e}");
    println!("{} ({:.1} s)", csv.display(), start.elapsed().as_secs_f64());
    Ok(Verdict::from_pass(pass))
}
