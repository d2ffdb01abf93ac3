//! Partition comparison helpers: ARI, scalar cross-MI, level-1 cleanliness.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mi_matrix::MiMatrix;
use crate::partition::Partition;
use crate::spectral::total_pairwise;

fn comb2(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Adjusted Rand Index between two labelings of the same items.
///
/// Returns 1.0 when both labelings are trivially identical (for example both
/// put everything in one cluster), where the chance correction is 0/0.
pub fn adjusted_rand_index(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::LengthMismatch { left: labels_a.len(), right: labels_b.len() });
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(Error::TooFewSamples { min: 2, got: n });
    }
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| comb2(c)).sum();
    let expected = sum_rows * sum_cols / comb2(n);
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Total cross-agent MI `T(M) = sum_{i<j} M_ij`.
pub fn total_cross_mi(m: &MiMatrix) -> f64 {
    total_pairwise(m)
}

/// Whether every group lies entirely on one side of the partition.
pub fn clean_level1(p: &Partition, groups: &[Vec<usize>]) -> Result<bool> {
    let n = p.n();
    p.validate(n)?;
    let mut seen = vec![false; n];
    for g in groups {
        for &i in g {
            if i >= n {
                return Err(Error::InvalidPartition(format!("group index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::InvalidPartition(format!("groups overlap at {i}")));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidPartition("groups do not cover every node".into()));
    }
    let labels = p.labels();
    Ok(groups
        .iter()
        .all(|g| g.iter().all(|&i| labels[i] == labels[g[0]])))
}

/// Whether the partition separates at least one group cleanly from the rest:
/// both sides nonempty and [`clean_level1`] holds.
pub fn isolates_a_group(p: &Partition, groups: &[Vec<usize>]) -> Result<bool> {
    Ok(p.is_proper() && clean_level1(p, groups)?)
}

/// Per-node group label for a list of disjoint groups covering `0..n`.
pub fn group_labels(groups: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut labels = vec![usize::MAX; n];
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            labels[i] = g;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ari_identical_up_to_relabeling() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = [5, 5, 3, 3, 9, 9];
        assert_abs_diff_eq!(adjusted_rand_index(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ari_known_value() {
        // Contingency [[2,1],[0,3]] (hand computed): index 1+3 = 4, rows 3+3 = 6,
        // cols 1+6 = 7, expected 6*7/15 = 2.8, max 6.5 -> (4-2.8)/(6.5-2.8).
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 0, 1, 1, 1, 1];
        assert_abs_diff_eq!(adjusted_rand_index(&a, &b).unwrap(), 1.2 / 3.7, epsilon = 1e-12);
    }

    #[test]
    fn ari_length_mismatch() {
        assert!(matches!(adjusted_rand_index(&[0, 1], &[0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn clean_level1_cases() {
        let groups = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        assert!(clean_level1(&Partition::new(vec![0, 1], vec![2, 3, 4, 5]), &groups).unwrap());
        assert!(!clean_level1(&Partition::new(vec![0, 1, 4], vec![2, 3, 5]), &groups).unwrap());
        let overlapping = vec![vec![0, 1, 2], vec![2, 3], vec![4, 5]];
        assert!(clean_level1(&Partition::new(vec![0, 1], vec![2, 3, 4, 5]), &overlapping).is_err());
    }

    #[test]
    fn total_cross_mi_values() {
        assert_eq!(total_cross_mi(&MiMatrix::zeros(4)), 0.0);
        let m = crate::spectral::planted_block(2, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(total_cross_mi(&m), 4.0, epsilon = 1e-15);
    }
}
