//! Paired two-sided tests on per-subject squared errors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Largest sample size for which the exact signed-rank distribution is used.
pub const EXACT_SIGNED_RANK_LIMIT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairedTest {
    #[default]
    Wilcoxon,
    TTest,
}

impl PairedTest {
    pub fn p_value(self, differences: &[f64]) -> f64 {
        match self {
            PairedTest::Wilcoxon => wilcoxon_signed_rank(differences),
            PairedTest::TTest => paired_t_test(differences),
        }
    }
}

/// Average ranks (1-based) of `values`, with ties sharing their mean rank.
/// Also returns `Σ (t³ − t)` over tie groups.
fn average_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut m = k + 1;
        while m < order.len() && values[order[m]] == values[order[k]] {
            m += 1;
        }
        let rank = (k + m + 1) as f64 / 2.0;
        for &i in &order[k..m] {
            ranks[i] = rank;
        }
        let t = (m - k) as f64;
        tie_term += t * t * t - t;
        k = m;
    }
    (ranks, tie_term)
}

/// Number of sign assignments of ranks `1..=n` reaching each positive-rank sum.
fn signed_rank_counts(n: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0.0; max + 1];
    counts[0] = 1.0;
    for r in 1..=n {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    counts
}

/// Two-sided Wilcoxon signed-rank p-value. Zero differences are discarded;
/// with none left the result is 1. The exact null distribution is used for
/// small untied samples, otherwise the normal approximation with tie and
/// continuity corrections.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> f64 {
    let d: Vec<f64> = differences.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, tie_term) = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let nf = n as f64;

    if n <= EXACT_SIGNED_RANK_LIMIT && tie_term == 0.0 {
        let counts = signed_rank_counts(n);
        let total = 2f64.powi(n as i32);
        let w = w_plus.round() as usize;
        let lower: f64 = counts[..=w].iter().sum::<f64>() / total;
        let upper: f64 = counts[w..].iter().sum::<f64>() / total;
        return (2.0 * lower.min(upper)).min(1.0);
    }

    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if !(var > 0.0) {
        return 1.0;
    }
    let diff = w_plus - mean;
    let corrected = (diff.abs() - 0.5).max(0.0);
    let z = corrected / var.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).min(1.0)
}

/// Two-sided one-sample t-test of zero mean difference.
pub fn paired_t_test(differences: &[f64]) -> f64 {
    let n = differences.len();
    if n < 2 {
        return 1.0;
    }
    let nf = n as f64;
    let mean = differences.iter().sum::<f64>() / nf;
    let var = differences.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return if mean == 0.0 { 1.0 } else { 0.0 };
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("degrees of freedom are positive");
    (2.0 * dist.sf(t.abs())).min(1.0)
}
