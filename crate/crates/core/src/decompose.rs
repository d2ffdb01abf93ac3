//! Recursive coalition hierarchies and window-by-window partition tracking.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::dataset::HiddenStateDataset;
use crate::error::{Error, Result};
use crate::mi::{estimate_mi_matrix, MiEstimationConfig};
use crate::mi_matrix::MiMatrix;
use crate::partition::Partition;
use crate::spectral::{fiedler_partition, SpectralResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    /// A split is kept only if its within/across ratio exceeds this.
    pub tau: f64,
    /// Both sides of a kept split must have at least this many agents.
    pub m_min: usize,
    /// Replicate matrices consulted per node when a replicate source is given.
    pub stability_reps: usize,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self { tau: 1.05, m_min: 2, stability_reps: 5 }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau = {} must be positive", self.tau)));
        }
        if self.m_min < 1 || self.stability_reps < 1 {
            return Err(Error::InvalidConfig("m_min and stability_reps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    AcceptedSplit,
    BelowMinSize,
    RatioBelowTau,
    Unstable,
    Degenerate,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::AcceptedSplit => "accepted-split",
            StopReason::BelowMinSize => "below-min-size",
            StopReason::RatioBelowTau => "ratio-below-tau",
            StopReason::Unstable => "unstable",
            StopReason::Degenerate => "degenerate",
        }
    }
}

/// Source of replicate MI matrices over the full agent set, used to check
/// that a split recurs before it is accepted.
pub trait ReplicateSource {
    fn replicate(&self, index: usize) -> Result<MiMatrix>;
}

impl ReplicateSource for [MiMatrix] {
    fn replicate(&self, index: usize) -> Result<MiMatrix> {
        self.get(index % self.len().max(1))
            .cloned()
            .ok_or_else(|| Error::InvalidConfig("empty replicate list".into()))
    }
}

impl ReplicateSource for Vec<MiMatrix> {
    fn replicate(&self, index: usize) -> Result<MiMatrix> {
        self.as_slice().replicate(index)
    }
}

/// Bootstrap replicates: samples drawn with replacement, MI re-estimated.
pub struct BootstrapReplicates<'a> {
    pub dataset: &'a HiddenStateDataset,
    pub cfg: MiEstimationConfig,
    pub seed: u64,
}

impl ReplicateSource for BootstrapReplicates<'_> {
    fn replicate(&self, index: usize) -> Result<MiMatrix> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let n = self.dataset.n_samples();
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        estimate_mi_matrix(&self.dataset.select_samples(&rows)?, &self.cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionTree {
    /// Global agent indices at this node, ascending.
    pub nodes: Vec<usize>,
    /// Fiedler analysis of the induced subgraph; absent for single agents.
    pub spectral: Option<SpectralResult>,
    pub stop_reason: StopReason,
    /// Children for the A and B sides when the split was accepted.
    pub split: Option<Box<(CoalitionTree, CoalitionTree)>>,
}

impl CoalitionTree {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn leaves(&self) -> Vec<&CoalitionTree> {
        match &self.split {
            None => vec![self],
            Some(children) => {
                let mut out = children.0.leaves();
                out.extend(children.1.leaves());
                out
            }
        }
    }

    /// Every node in pre-order.
    pub fn all_nodes(&self) -> Vec<&CoalitionTree> {
        let mut out = vec![self];
        if let Some(children) = &self.split {
            out.extend(children.0.all_nodes());
            out.extend(children.1.all_nodes());
        }
        out
    }

    /// Whether some node of the tree holds exactly `set`.
    pub fn contains_set(&self, set: &[usize]) -> bool {
        let mut want = set.to_vec();
        want.sort_unstable();
        self.all_nodes().iter().any(|t| t.nodes == want)
    }

    /// Split accepted at this node, in global indices.
    pub fn split_partition(&self) -> Option<Partition> {
        self.split
            .as_ref()
            .map(|c| Partition::new(c.0.nodes.clone(), c.1.nodes.clone()))
    }

    pub fn depth(&self) -> usize {
        match &self.split {
            None => 0,
            Some(c) => 1 + c.0.depth().max(c.1.depth()),
        }
    }

    /// Indented plain-text rendering, one node per line.
    pub fn render_text(&self, ids: Option<&[String]>) -> String {
        let mut out = String::new();
        self.render_into(&mut out, 0, ids);
        out
    }

    fn render_into(&self, out: &mut String, depth: usize, ids: Option<&[String]>) {
        let names: Vec<String> = self
            .nodes
            .iter()
            .map(|&i| ids.map_or_else(|| i.to_string(), |ids| ids[i].clone()))
            .collect();
        let _ = write!(out, "{}{{{}}} {}", "  ".repeat(depth), names.join(","), self.stop_reason.as_str());
        if let Some(s) = &self.spectral {
            let r = s.ratio_r.map_or_else(|| "undefined".to_owned(), |r| format!("{r:.4}"));
            let _ = write!(out, " R={r} phi={:.4} lambda2={:.4}", s.phi_spectral, s.lambda2);
        }
        out.push('\n');
        if let Some(c) = &self.split {
            c.0.render_into(out, depth + 1, ids);
            c.1.render_into(out, depth + 1, ids);
        }
    }
}

impl fmt::Display for CoalitionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_text(None))
    }
}

/// Divisive Fiedler decomposition.
///
/// A node is split, and both sides are recursed into, only when the spectrum is
/// non-degenerate, both sides have at least `m_min` agents, the within/across
/// ratio exceeds `tau`, and (with a replicate source) the same split appears in
/// a strict majority of `stability_reps` replicates.
pub fn recursive_decompose(
    m: &MiMatrix,
    cfg: &DecompositionConfig,
    resampler: Option<&dyn ReplicateSource>,
) -> Result<CoalitionTree> {
    cfg.validate()?;
    if m.n() < 2 {
        return Err(Error::InvalidMatrix(format!("need at least 2 agents, got {}", m.n())));
    }
    let replicates = match resampler {
        Some(src) => Some(
            (0..cfg.stability_reps)
                .map(|k| {
                    let r = src.replicate(k)?;
                    if r.n() != m.n() {
                        return Err(Error::InvalidMatrix(format!(
                            "replicate {k} has {} agents, expected {}",
                            r.n(),
                            m.n()
                        )));
                    }
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    decompose_node(m, (0..m.n()).collect(), cfg, replicates.as_deref())
}

fn decompose_node(
    m: &MiMatrix,
    nodes: Vec<usize>,
    cfg: &DecompositionConfig,
    replicates: Option<&[MiMatrix]>,
) -> Result<CoalitionTree> {
    if nodes.len() < 2 {
        return Ok(CoalitionTree { nodes, spectral: None, stop_reason: StopReason::BelowMinSize, split: None });
    }
    let sub = m.submatrix(&nodes);
    let spectral = fiedler_partition(&sub)?;
    let local = spectral.partition.clone();

    let stop = if spectral.degenerate {
        Some(StopReason::Degenerate)
    } else if local.a.len() < cfg.m_min || local.b.len() < cfg.m_min {
        Some(StopReason::BelowMinSize)
    } else if !spectral.ratio_r.is_some_and(|r| r > cfg.tau) {
        Some(StopReason::RatioBelowTau)
    } else if let Some(reps) = replicates {
        let agree = reps
            .iter()
            .map(|r| fiedler_partition(&r.submatrix(&nodes)).map(|s| s.partition.same_split(&local)))
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .filter(|&same| same)
            .count();
        (2 * agree <= reps.len()).then_some(StopReason::Unstable)
    } else {
        None
    };

    if let Some(stop_reason) = stop {
        return Ok(CoalitionTree { nodes, spectral: Some(spectral), stop_reason, split: None });
    }
    let global = local.lift(&nodes);
    let left = decompose_node(m, global.a, cfg, replicates)?;
    let right = decompose_node(m, global.b, cfg, replicates)?;
    Ok(CoalitionTree {
        nodes,
        spectral: Some(spectral),
        stop_reason: StopReason::AcceptedSplit,
        split: Some(Box::new((left, right))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub window: usize,
    pub matrix: Vec<Vec<f64>>,
    pub spectral: SpectralResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTimeline {
    pub entries: Vec<TimelineEntry>,
    /// Windows whose unordered split differs from the previous window's.
    pub change_points: Vec<usize>,
}

impl PartitionTimeline {
    pub fn partitions(&self) -> Vec<&Partition> {
        self.entries.iter().map(|e| &e.spectral.partition).collect()
    }
}

/// Fiedler split per window, with change points where the set pair changes.
pub fn track_partitions(matrices: &[MiMatrix]) -> Result<PartitionTimeline> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InvalidConfig("need at least one window".into()))?;
    let mut entries: Vec<TimelineEntry> = Vec::with_capacity(matrices.len());
    let mut change_points = Vec::new();
    for (t, m) in matrices.iter().enumerate() {
        if m.n() != first.n() {
            return Err(Error::InvalidMatrix(format!(
                "window {t} has {} agents, expected {}",
                m.n(),
                first.n()
            )));
        }
        let spectral = fiedler_partition(m)?;
        if let Some(prev) = entries.last() {
            if !prev.spectral.partition.same_split(&spectral.partition) {
                change_points.push(t);
            }
        }
        entries.push(TimelineEntry {
            window: t,
            matrix: m.values().rows().into_iter().map(|r| r.to_vec()).collect(),
            spectral,
        });
    }
    Ok(PartitionTimeline { entries, change_points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{planted_block, planted_split};

    #[test]
    fn uniform_matrix_is_single_leaf() {
        let m = MiMatrix::from_fn(6, |_, _| 0.4).unwrap();
        let t = recursive_decompose(&m, &DecompositionConfig::default(), None).unwrap();
        assert!(t.is_leaf());
        assert!(matches!(t.stop_reason, StopReason::RatioBelowTau | StopReason::Degenerate));
    }

    #[test]
    fn uniform_matrix_with_small_gap_stops_on_ratio() {
        // Tiny perturbation lifts the degeneracy; R stays ~1.
        let m = MiMatrix::from_fn(6, |i, j| 1.0 + 1e-3 * ((i * 7 + j * 3) % 5) as f64).unwrap();
        let t = recursive_decompose(&m, &DecompositionConfig::default(), None).unwrap();
        assert!(t.is_leaf());
        assert_eq!(t.stop_reason, StopReason::RatioBelowTau);
    }

    #[test]
    fn disconnected_blocks_split_once() {
        let m = planted_block(2, 1.0, 0.0).unwrap();
        let t = recursive_decompose(&m, &DecompositionConfig::default(), None).unwrap();
        assert_eq!(t.stop_reason, StopReason::AcceptedSplit);
        assert_eq!(t.split_partition().unwrap(), planted_split(2));
        assert!(t.leaves().iter().all(|l| l.stop_reason == StopReason::BelowMinSize));
    }

    #[test]
    fn nested_blocks_give_two_levels() {
        let m = MiMatrix::from_fn(8, |i, j| {
            let outer = if i / 4 == j / 4 { 1.0 } else { 0.1 };
            outer + if i / 2 == j / 2 { 0.5 } else { 0.0 }
        })
        .unwrap();
        let t = recursive_decompose(&m, &DecompositionConfig::default(), None).unwrap();
        assert_eq!(t.depth(), 2);
        let leaves: Vec<Vec<usize>> = t.leaves().iter().map(|l| l.nodes.clone()).collect();
        assert_eq!(leaves, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]);
    }

    #[test]
    fn unstable_split_is_rejected() {
        let m = planted_block(2, 1.0, 0.2).unwrap();
        // Every replicate prefers a different split.
        let other = MiMatrix::from_fn(4, |i, j| if i % 2 == j % 2 { 1.0 } else { 0.2 }).unwrap();
        let reps = vec![other.clone(), other.clone(), m.clone(), other.clone(), other];
        let cfg = DecompositionConfig::default();
        let t = recursive_decompose(&m, &cfg, Some(&reps)).unwrap();
        assert_eq!(t.stop_reason, StopReason::Unstable);
        let reps = vec![m.clone(); 5];
        let t = recursive_decompose(&m, &cfg, Some(&reps)).unwrap();
        assert_eq!(t.stop_reason, StopReason::AcceptedSplit);
    }

    #[test]
    fn tracking_constant_sequence() {
        let m = planted_block(2, 1.0, 0.1).unwrap();
        let tl = track_partitions(&vec![m; 4]).unwrap();
        assert!(tl.change_points.is_empty());
        assert_eq!(tl.entries.len(), 4);
    }

    #[test]
    fn tracking_detects_switch() {
        let before = planted_block(2, 1.0, 0.1).unwrap();
        let after = before.permuted(&[0, 2, 1, 3]);
        let mut seq = vec![before; 5];
        seq.extend(vec![after; 4]);
        let tl = track_partitions(&seq).unwrap();
        assert_eq!(tl.change_points, vec![5]);
        assert_eq!(*tl.partitions()[8], Partition::new(vec![0, 2], vec![1, 3]));
    }

    #[test]
    fn tracking_rejects_dimension_change() {
        let seq = vec![MiMatrix::zeros(3), MiMatrix::zeros(4)];
        assert!(track_partitions(&seq).is_err());
        assert!(track_partitions(&[]).is_err());
    }
}
