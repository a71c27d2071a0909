//! Pearson chi-square tests for sampler-versus-oracle agreement.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Bins with expected count below this are pooled.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Bins after pooling.
    pub bins: usize,
    /// Observations that landed on outcomes of zero expected probability.
    pub impossible: u64,
}

impl ChiSquareResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.impossible > 0 || self.p_value < alpha
    }
}

/// Goodness of fit of `observed` counts to `probs`. Outcomes with zero
/// probability must never be observed; a single such observation rejects.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquareResult {
    assert_eq!(observed.len(), probs.len(), "counts and probabilities differ in length");
    let n: u64 = observed.iter().sum();
    let impossible = observed
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p <= 0.0)
        .map(|(o, _)| *o)
        .sum();
    let total_p: f64 = probs.iter().filter(|p| **p > 0.0).sum();
    let cells: Vec<(f64, f64)> = observed
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(&o, &p)| (o as f64, n as f64 * p / total_p))
        .collect();
    let pooled = pool(cells);
    let statistic = pooled.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    finish(statistic, pooled.len(), impossible)
}

/// Homogeneity of two count vectors over the same outcomes.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquareResult {
    assert_eq!(a.len(), b.len(), "count vectors differ in length");
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let n = (na + nb) as f64;
    if na == 0 || nb == 0 {
        return finish(0.0, 1, 0);
    }
    // pool on column totals, then test the 2 x K table
    let mut columns: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x + **y > 0)
        .map(|(&x, &y)| (x as f64, y as f64))
        .collect();
    columns.sort_by(|p, q| (p.0 + p.1).total_cmp(&(q.0 + q.1)));
    let share_min = (na.min(nb)) as f64 / n;
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut pending = (0.0, 0.0);
    for (x, y) in columns {
        pending.0 += x;
        pending.1 += y;
        if (pending.0 + pending.1) * share_min >= MIN_EXPECTED {
            merged.push(pending);
            pending = (0.0, 0.0);
        }
    }
    if pending.0 + pending.1 > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += pending.0;
                last.1 += pending.1;
            }
            None => merged.push(pending),
        }
    }
    let statistic = merged
        .iter()
        .map(|&(x, y)| {
            let col = x + y;
            let ea = col * na as f64 / n;
            let eb = col * nb as f64 / n;
            (x - ea).powi(2) / ea + (y - eb).powi(2) / eb
        })
        .sum();
    finish(statistic, merged.len(), 0)
}

/// Merges cells with expected count below [`MIN_EXPECTED`], smallest first,
/// into one pooled cell; a pooled cell that is still too small joins the
/// smallest remaining cell.
fn pool(mut cells: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    cells.sort_by(|a, b| a.1.total_cmp(&b.1));
    let split = cells.partition_point(|c| c.1 < MIN_EXPECTED);
    let (small, large) = cells.split_at(split);
    let mut out: Vec<(f64, f64)> = large.to_vec();
    if !small.is_empty() {
        let merged = small.iter().fold((0.0, 0.0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
        if merged.1 >= MIN_EXPECTED || out.is_empty() {
            out.push(merged);
        } else {
            out[0].0 += merged.0;
            out[0].1 += merged.1;
        }
    }
    out
}

fn finish(statistic: f64, bins: usize, impossible: u64) -> ChiSquareResult {
    let dof = bins.saturating_sub(1);
    let p_value = if impossible > 0 {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(0.0)
    };
    ChiSquareResult {
        statistic,
        dof,
        p_value,
        bins,
        impossible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_does_not_reject() {
        let r = chi_square_gof(&[250, 250, 500], &[0.25, 0.25, 0.5]);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 2);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn known_statistic() {
        // (60-50)^2/50 + (40-50)^2/50 = 4, one degree of freedom
        let r = chi_square_gof(&[60, 40], &[0.5, 0.5]);
        assert!((r.statistic - 4.0).abs() < 1e-12);
        assert!((r.p_value - 0.0455002638963584).abs() < 1e-9);
    }

    #[test]
    fn impossible_outcome_rejects() {
        let r = chi_square_gof(&[99, 1], &[1.0, 0.0]);
        assert!(r.rejects(1e-300));
    }

    #[test]
    fn small_bins_are_pooled() {
        let r = chi_square_gof(&[1000, 1, 2, 0], &[0.997, 0.001, 0.001, 0.001]);
        assert_eq!(r.bins, 1);
        assert_eq!(r.dof, 0);
    }

    #[test]
    fn two_sample_detects_shift() {
        let same = chi_square_two_sample(&[500, 300, 200], &[505, 290, 205]);
        assert!(!same.rejects(0.001));
        let shifted = chi_square_two_sample(&[500, 300, 200], &[200, 300, 500]);
        assert!(shifted.rejects(0.001));
    }
}
