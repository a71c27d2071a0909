use papl_core::{beta_identity_check, Schedule};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, write_csv};
use crate::Verdict;

#[derive(Serialize)]
struct Row {
    schedule: String,
    length: usize,
    k: usize,
    lhs: f64,
    rhs: f64,
    abs_error: f64,
    quadrature_error: f64,
    pass: bool,
}

fn schedule_name(schedule: &Schedule) -> String {
    match schedule {
        Schedule::Linear => "linear".into(),
        Schedule::Cosine => "cosine".into(),
        Schedule::Polynomial { power } => format!("polynomial(power={power})"),
    }
}

pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<Verdict> {
    let beta = &cfg.beta;
    let mut rows = Vec::new();
    for schedule in &beta.schedules {
        let name = schedule_name(schedule);
        for len in 1..=beta.max_length {
            for k in 1..=len {
                let c = beta_identity_check(len, k, schedule)?;
                rows.push(Row {
                    schedule: name.clone(),
                    length: len,
                    k,
                    lhs: c.lhs,
                    rhs: c.rhs,
                    abs_error: c.abs_error,
                    quadrature_error: c.quadrature_error,
                    pass: c.abs_error <= beta.tolerance,
                });
            }
        }
    }
    ensure_dir(&cfg.out)?;
    let path = write_csv(&cfg.out.join("beta_identity.csv"), &rows)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    let worst = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    println!(
        "{} checks, {failed} above {:e}, worst error {worst:e}; {}",
        rows.len(),
        beta.tolerance,
        path.display()
    );
    Ok(Verdict::from_pass(failed == 0))
}
