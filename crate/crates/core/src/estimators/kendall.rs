//! Kendall τ-b by merge-sort inversion counting (Knight's algorithm).
//!
//! Samples are replaced by integer ranks first, so ties are detected exactly
//! and every count is an integer; the only floating-point step is the final
//! ratio.

use crate::error::{Error, Result};

/// Dense integer ranks of a series plus the number of tied pairs it contains.
#[derive(Debug, Clone)]
pub struct RankedSeries {
    ranks: Vec<u32>,
    /// Sample indices sorted by rank (stable in index).
    order: Vec<u32>,
    tied_pairs: u64,
}

impl RankedSeries {
    pub fn new(values: &[f64]) -> Self {
        let mut order: Vec<u32> = (0..values.len() as u32).collect();
        order.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]));
        let mut ranks = vec![0u32; values.len()];
        let mut tied_pairs = 0u64;
        let mut rank = 0u32;
        let mut run = 0u64;
        for k in 0..order.len() {
            if k > 0 && values[order[k] as usize] != values[order[k - 1] as usize] {
                rank += 1;
                tied_pairs += run * run.saturating_sub(1) / 2;
                run = 0;
            }
            ranks[order[k] as usize] = rank;
            run += 1;
        }
        tied_pairs += run * run.saturating_sub(1) / 2;
        RankedSeries {
            ranks,
            order,
            tied_pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// True when every sample carries the same value.
    pub fn is_constant(&self) -> bool {
        let n = self.len() as u64;
        n >= 2 && self.tied_pairs == n * (n - 1) / 2
    }
}

/// Pair counts that determine τ-b.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TauCounts {
    /// Concordant minus discordant pairs.
    pub score: i64,
    /// Pairs not tied in x.
    pub untied_x: u64,
    /// Pairs not tied in y.
    pub untied_y: u64,
}

impl TauCounts {
    pub fn tau_b(&self) -> Option<f64> {
        if self.untied_x == 0 || self.untied_y == 0 {
            return None;
        }
        Some(self.score as f64 / ((self.untied_x as f64) * (self.untied_y as f64)).sqrt())
    }
}

/// Number of pairs `i < j` with `v[i] > v[j]`; sorts `v` as a side effect.
fn count_inversions(v: &mut [u32], scratch: &mut [u32]) -> u64 {
    let n = v.len();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[j] < v[i] {
                    scratch[k] = v[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    scratch[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            scratch[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            scratch[k..k + (end - j)].copy_from_slice(&v[j..end]);
            start = end;
        }
        v.copy_from_slice(scratch);
        width *= 2;
    }
    swaps
}

/// O(t log t) pair counts for two ranked series of equal length.
pub fn tau_counts(x: &RankedSeries, y: &RankedSeries) -> Result<TauCounts> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::invalid("rank correlation needs at least two samples"));
    }
    // y ranks in x order; runs tied in x are sorted by y so they add no inversions
    let mut seq: Vec<u32> = x.order.iter().map(|&i| y.ranks[i as usize]).collect();
    let mut joint_ties = 0u64;
    let mut start = 0;
    while start < n {
        let rx = x.ranks[x.order[start] as usize];
        let mut end = start + 1;
        while end < n && x.ranks[x.order[end] as usize] == rx {
            end += 1;
        }
        if end - start > 1 {
            let run = &mut seq[start..end];
            run.sort_unstable();
            let mut k = 0;
            while k < run.len() {
                let mut m = k + 1;
                while m < run.len() && run[m] == run[k] {
                    m += 1;
                }
                let c = (m - k) as u64;
                joint_ties += c * (c - 1) / 2;
                k = m;
            }
        }
        start = end;
    }
    let mut scratch = vec![0u32; n];
    let discordant = count_inversions(&mut seq, &mut scratch);
    let total = (n as u64) * (n as u64 - 1) / 2;
    let score = total as i64 - x.tied_pairs as i64 - y.tied_pairs as i64 + joint_ties as i64
        - 2 * discordant as i64;
    Ok(TauCounts {
        score,
        untied_x: total - x.tied_pairs,
        untied_y: total - y.tied_pairs,
    })
}

/// Kendall τ-b of two real series.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    let rx = RankedSeries::new(x);
    let ry = RankedSeries::new(y);
    if rx.is_constant() {
        return Err(Error::DegenerateChannel { channel: 0 });
    }
    if ry.is_constant() {
        return Err(Error::DegenerateChannel { channel: 1 });
    }
    tau_counts(&rx, &ry)?
        .tau_b()
        .ok_or_else(|| Error::invalid("τ-b undefined"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement_and_reversal() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert_eq!(kendall_tau_b(&x, &y).unwrap(), 1.0);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau_b(&x, &z).unwrap(), -1.0);
    }

    #[test]
    fn one_discordant_pair() {
        let t = kendall_tau_b(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn inversion_count_matches_definition() {
        let mut v = vec![3u32, 1, 2, 5, 4, 0];
        let mut s = vec![0u32; v.len()];
        assert_eq!(count_inversions(&mut v, &mut s), 3 + 1 + 1 + 2 + 1);
        assert_eq!(v, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            kendall_tau_b(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]),
            Err(Error::DegenerateChannel { channel: 1 })
        ));
    }
}
