use std::fs::File;
use std::io::BufWriter;
use std::time::Instant;

use papl_core::par::map_indexed;
use papl_core::stats::{chi_square_gof, ChiSquareResult};
use papl_core::{
    exact_terminal_distribution, exact_terminal_distribution_p2, sample_p2, sample_planned, sample_vanilla,
    PathDistribution, PositionPlanner, SampleSet, SamplerConfig, TabularDenoiser,
};
use rand::RngCore;
use serde::Serialize;

use super::{denoisers, instance_rng};
use crate::config::{ExperimentConfig, SamplerKind};
use crate::output::{ensure_dir, write_csv, write_json};
use crate::{Usage, Verdict};

/// Stream group of the sampler seeds; the denoisers use group 0.
const SEED_GROUP: u64 = 1;

#[derive(Serialize)]
struct Row {
    instance: usize,
    sampler: String,
    law: String,
    samples: usize,
    statistic: f64,
    dof: usize,
    p_value: f64,
    impossible: u64,
    rejected: bool,
}

#[derive(Serialize)]
struct KindSummary {
    sampler: String,
    instances: usize,
    not_rejected: usize,
    pass_fraction: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Summary {
    alpha: f64,
    samples: usize,
    min_pass_fraction: f64,
    mismatch: bool,
    kinds: Vec<KindSummary>,
    pass: bool,
}

fn draw(den: &TabularDenoiser, kind: &SamplerKind, config: &SamplerConfig) -> papl_core::Result<SampleSet> {
    match (kind, kind.position_planner(), kind.set_planner()) {
        (SamplerKind::Vanilla, _, _) => sample_vanilla(den, config),
        (_, Some(p), _) => sample_planned(den, &p, config),
        (_, _, Some(s)) => sample_p2(den, &s, config),
        _ => unreachable!("every sampler kind has a planner"),
    }
}

/// The law a sampler is tested against. In mismatch mode the vanilla sampler
/// is tested against the greedy law and every other sampler against the
/// vanilla law, so a working harness must reject.
fn law(den: &TabularDenoiser, kind: &SamplerKind, mismatch: bool, jobs: usize) -> papl_core::Result<(String, PathDistribution)> {
    if mismatch {
        let planner = match kind {
            SamplerKind::Vanilla => PositionPlanner::Greedy,
            _ => PositionPlanner::Uniform,
        };
        return Ok((planner.name(), exact_terminal_distribution(den, &planner, jobs)?));
    }
    match (kind.position_planner(), kind.set_planner()) {
        (Some(p), _) => Ok((kind.name(), exact_terminal_distribution(den, &p, jobs)?)),
        (_, Some(s)) => Ok((kind.name(), exact_terminal_distribution_p2(den, &s)?)),
        _ => unreachable!("every sampler kind has a planner"),
    }
}

pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<Verdict> {
    let start = Instant::now();
    let s = &cfg.sampler;
    if s.length == 0 || s.samples == 0 || s.kinds.is_empty() {
        return Err(Usage("sampler.length, sampler.samples and sampler.kinds must be non-empty".into()).into());
    }
    if !(s.alpha > 0.0 && s.alpha < 1.0) || !(0.0..=1.0).contains(&s.min_pass_fraction) {
        return Err(Usage("sampler.alpha must lie in (0, 1) and min_pass_fraction in [0, 1]".into()).into());
    }
    let instances = denoisers(cfg, s.length, 0, s.instances)?;
    ensure_dir(&cfg.out)?;
    let mut rows = Vec::new();
    let mut kinds = Vec::new();
    for (k, kind) in s.kinds.iter().enumerate() {
        let results = map_indexed(cfg.jobs, instances.len(), |i| -> papl_core::Result<(Row, Option<SampleSet>)> {
            let den = &instances[i].0;
            let seed = instance_rng(cfg.seed, SEED_GROUP + k as u64, i as u64).next_u64();
            let mut config = SamplerConfig::new(seed, s.samples);
            let traced = s.trace && i == 0;
            if traced {
                config = config.with_paths();
            }
            let set = draw(den, kind, &config)?;
            let (law_name, law) = law(den, kind, s.mismatch, 1)?;
            let test: ChiSquareResult = chi_square_gof(&set.counts(), &law.marginal);
            let row = Row {
                instance: i,
                sampler: kind.name(),
                law: law_name,
                samples: s.samples,
                statistic: test.statistic,
                dof: test.dof,
                p_value: test.p_value,
                impossible: test.impossible,
                rejected: test.rejects(s.alpha),
            };
            Ok((row, traced.then_some(set)))
        });
        let mut not_rejected = 0;
        let mut count = 0;
        for r in results {
            let (row, traced) = r?;
            if let Some(set) = traced {
                let path = cfg.out.join(format!("trace_{}.ndjson", kind.slug()));
                let file = File::create(&path).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
                set.write_trace(BufWriter::new(file))?;
            }
            count += 1;
            not_rejected += usize::from(!row.rejected);
            rows.push(row);
        }
        let pass_fraction = not_rejected as f64 / count as f64;
        let pass = pass_fraction >= s.min_pass_fraction;
        println!(
            "{:<24} {not_rejected}/{count} not rejected at alpha={} {}",
            kind.name(),
            s.alpha,
            if pass { "PASS" } else { "FAIL" }
        );
        kinds.push(KindSummary {
            sampler: kind.name(),
            instances: count,
            not_rejected,
            pass_fraction,
            pass,
        });
    }
    let pass = kinds.iter().all(|k| k.pass);
    let csv = write_csv(&cfg.out.join("sampler_check.csv"), &rows)?;
    write_json(
        &cfg.out.join("sampler_summary.json"),
        &Summary {
            alpha: s.alpha,
            samples: s.samples,
            min_pass_fraction: s.min_pass_fraction,
            mismatch: s.mismatch,
            kinds,
            pass,
        },
    )?;
    println!("{} ({:.1} s)", csv.display(), start.elapsed().as_secs_f64());
    Ok(Verdict::from_pass(pass))
}
