use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided split of the node set `0..n`. Both index lists are sorted.
///
/// A side may be empty (degenerate spectra can produce that); operations that
/// need a proper cut check [`Partition::validate_cut`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl Partition {
    pub fn new(mut a: Vec<usize>, mut b: Vec<usize>) -> Self {
        a.sort_unstable();
        b.sort_unstable();
        Self { a, b }
    }

    /// `true` entries go to side A.
    pub fn from_mask(in_a: &[bool]) -> Self {
        let (a, b): (Vec<usize>, Vec<usize>) = (0..in_a.len()).partition(|&i| in_a[i]);
        Self { a, b }
    }

    pub fn n(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// Checks that the sides cover `0..n` without overlap.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.a.iter().chain(&self.b) {
            if i >= n {
                return Err(Error::InvalidPartition(format!("index {i} out of range for n = {n}")));
            }
            if seen[i] {
                return Err(Error::InvalidPartition(format!("index {i} appears twice")));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("index {missing} missing")));
        }
        Ok(())
    }

    /// Like [`Partition::validate`], and additionally both sides nonempty.
    pub fn validate_cut(&self, n: usize) -> Result<()> {
        self.validate(n)?;
        if self.a.is_empty() || self.b.is_empty() {
            return Err(Error::InvalidPartition("one side is empty".into()));
        }
        Ok(())
    }

    pub fn is_proper(&self) -> bool {
        !self.a.is_empty() && !self.b.is_empty()
    }

    /// Side label per node: 0 for A, 1 for B.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n()];
        for &i in &self.b {
            labels[i] = 1;
        }
        labels
    }

    /// Same unordered pair of sets, regardless of which side is called A.
    pub fn same_split(&self, other: &Partition) -> bool {
        (self.a == other.a && self.b == other.b) || (self.a == other.b && self.b == other.a)
    }

    /// Orientation with node 0 (or the smallest index present) on side A.
    pub fn canonical(&self) -> Partition {
        match (self.a.first(), self.b.first()) {
            (Some(&x), Some(&y)) if y < x => Partition { a: self.b.clone(), b: self.a.clone() },
            (None, Some(_)) => Partition { a: self.b.clone(), b: self.a.clone() },
            _ => self.clone(),
        }
    }

    /// Maps local indices through `nodes` (used for induced subgraphs).
    pub fn lift(&self, nodes: &[usize]) -> Partition {
        Partition::new(
            self.a.iter().map(|&i| nodes[i]).collect(),
            self.b.iter().map(|&i| nodes[i]).collect(),
        )
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        write!(f, "{}|{}", join(&self.a), join(&self.b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_overlap_and_gaps() {
        assert!(Partition::new(vec![0, 1], vec![1, 2]).validate(3).is_err());
        assert!(Partition::new(vec![0], vec![2]).validate(3).is_err());
        assert!(Partition::new(vec![0, 1, 2], vec![]).validate_cut(3).is_err());
        assert!(Partition::new(vec![0, 2], vec![1]).validate_cut(3).is_ok());
    }

    #[test]
    fn same_split_ignores_orientation() {
        let p = Partition::new(vec![0, 1], vec![2, 3]);
        let q = Partition::new(vec![2, 3], vec![0, 1]);
        assert!(p.same_split(&q));
        assert_eq!(q.canonical(), p);
        assert_eq!(p.to_string(), "0,1|2,3");
    }
}
