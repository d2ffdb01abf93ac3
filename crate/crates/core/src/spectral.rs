//! Normalized-cut machinery on an MI graph: cut statistics, the symmetric
//! normalized Laplacian, the Fiedler bipartition and the scalar summaries
//! derived from it.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::mi_matrix::MiMatrix;
use crate::partition::Partition;

/// Largest `n` accepted by [`brute_force_min_ncut`].
pub const BRUTE_FORCE_LIMIT: usize = 14;

/// Fiedler coordinates smaller than this are treated as exact zeros (side A).
pub const ZERO_COORDINATE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutStats {
    pub cut: f64,
    pub vol_a: f64,
    pub vol_b: f64,
    /// `+inf` when either volume is zero.
    pub ncut: f64,
}

pub fn cut_statistics(m: &MiMatrix, p: &Partition) -> Result<CutStats> {
    p.validate_cut(m.n())?;
    let deg = m.degrees();
    let cut = cut_weight(m, p);
    let vol_a: f64 = p.a.iter().map(|&i| deg[i]).sum();
    let vol_b: f64 = p.b.iter().map(|&i| deg[i]).sum();
    let ncut = if vol_a == 0.0 || vol_b == 0.0 {
        f64::INFINITY
    } else {
        cut / vol_a + cut / vol_b
    };
    Ok(CutStats { cut, vol_a, vol_b, ncut })
}

fn cut_weight(m: &MiMatrix, p: &Partition) -> f64 {
    p.a.iter()
        .flat_map(|&i| p.b.iter().map(move |&j| (i, j)))
        .map(|(i, j)| m.get(i, j))
        .sum()
}

/// `I - D^{-1/2} M D^{-1/2}`; rows and columns of isolated nodes are identity rows.
pub fn normalized_laplacian(m: &MiMatrix) -> Array2<f64> {
    let n = m.n();
    let inv_sqrt: Vec<f64> = m
        .degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let off = m.get(i, j) * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

/// Everything the Fiedler analysis reports for one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    /// Ascending eigenvalues of the normalized Laplacian.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm Fiedler vector, oriented so its first nonzero entry is positive.
    pub fiedler: Vec<f64>,
    pub lambda2: f64,
    pub partition: Partition,
    pub phi_spectral: f64,
    pub mean_within: Option<f64>,
    pub mean_across: Option<f64>,
    /// `None` when undefined; `+inf` when nothing crosses the cut.
    pub ratio_r: Option<f64>,
    pub degenerate: bool,
}

impl SpectralResult {
    /// Flat key-value view used inside experiment reports.
    pub fn to_flat_record(&self, prefix: &str) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        let key = |k: &str| format!("{prefix}{k}");
        out.insert(key("lambda2"), num(Some(self.lambda2)));
        out.insert(key("partition"), json!(self.partition.to_string()));
        out.insert(key("phi_spectral"), num(Some(self.phi_spectral)));
        out.insert(key("mean_within"), num(self.mean_within));
        out.insert(key("mean_across"), num(self.mean_across));
        out.insert(key("ratio_r"), num(self.ratio_r));
        out.insert(key("degenerate"), json!(self.degenerate));
        out.insert(key("fiedler"), json!(self.fiedler));
        out
    }
}

/// JSON number, with `"inf"` for infinities and `null` for undefined values.
pub fn num(v: Option<f64>) -> Value {
    match v {
        Some(x) if x.is_finite() => json!(x),
        Some(x) if x > 0.0 => json!("inf"),
        Some(x) if x < 0.0 => json!("-inf"),
        _ => Value::Null,
    }
}

/// Fiedler bipartition of the MI graph.
///
/// The trivial null vector `D^{1/2} 1` is deflated before the Fiedler vector
/// is read off, so a disconnected two-block graph still splits along its
/// blocks. Isolated nodes get coordinate 0 and therefore land in A.
pub fn fiedler_partition(m: &MiMatrix) -> Result<SpectralResult> {
    let n = m.n();
    if n < 2 {
        return Err(Error::InvalidMatrix(format!("need at least 2 nodes, got {n}")));
    }
    let lap = normalized_laplacian(m);
    let full = symmetric_eigen(&lap)?;
    let eigenvalues = full.values.to_vec();
    let lambda_max = *eigenvalues.last().expect("n >= 2");
    let gap_tol = 1e-9 * lambda_max.max(1.0);

    let deg = m.degrees();
    let active: Vec<usize> = (0..n).filter(|&i| deg[i] > 0.0).collect();

    let mut fiedler = vec![0.0; n];
    let (lambda2, degenerate) = if active.len() < 2 {
        // No edges at all: every cut is equally (un)informative.
        (eigenvalues[1], true)
    } else {
        let sub = m.submatrix(&active);
        let sub_lap = normalized_laplacian(&sub);
        let sub_deg = sub.degrees();
        let vol: f64 = sub_deg.iter().sum();
        let k = active.len();
        // Push the known null vector (sqrt of degrees) out of the bottom of the spectrum.
        let deflated = Array2::from_shape_fn((k, k), |(i, j)| {
            sub_lap[[i, j]] + 3.0 * (sub_deg[i] * sub_deg[j]).sqrt() / vol
        });
        let eig = symmetric_eigen(&deflated)?;
        for (slot, &node) in active.iter().enumerate() {
            fiedler[node] = eig.vectors[[slot, 0]];
        }
        let degenerate = k >= 3 && eig.values[1] - eig.values[0] < gap_tol;
        (eig.values[0], degenerate)
    };

    for v in fiedler.iter_mut() {
        if v.abs() < ZERO_COORDINATE {
            *v = 0.0;
        }
    }
    if let Some(first) = fiedler.iter().copied().find(|v| *v != 0.0) {
        if first < 0.0 {
            fiedler.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let mask: Vec<bool> = fiedler.iter().map(|&v| v >= 0.0).collect();
    let partition = Partition::from_mask(&mask);
    let contrast = partition_contrast(m, &partition)?;
    Ok(SpectralResult {
        eigenvalues,
        fiedler,
        lambda2,
        phi_spectral: phi_spectral(m, &partition)?,
        partition,
        mean_within: contrast.mean_within,
        mean_across: contrast.mean_across,
        ratio_r: contrast.ratio,
        degenerate,
    })
}

/// Sum of the strict upper triangle.
pub fn total_pairwise(m: &MiMatrix) -> f64 {
    let n = m.n();
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| m.get(i, j)).sum()
}

/// Fraction of total pairwise MI crossing the partition; 0 for an empty graph.
pub fn phi_spectral(m: &MiMatrix, p: &Partition) -> Result<f64> {
    p.validate(m.n())?;
    let total = total_pairwise(m);
    if total > 0.0 {
        Ok((cut_weight(m, p) / total).clamp(0.0, 1.0))
    } else {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    /// `None` when both sides are singletons (no within pairs).
    pub mean_within: Option<f64>,
    /// `None` when one side is empty.
    pub mean_across: Option<f64>,
    pub ratio: Option<f64>,
}

/// Mean within-side MI, mean cross-side MI and their ratio R.
pub fn partition_contrast(m: &MiMatrix, p: &Partition) -> Result<Contrast> {
    p.validate(m.n())?;
    let within_sum = |side: &[usize]| -> f64 {
        side.iter()
            .enumerate()
            .flat_map(|(k, &i)| side[k + 1..].iter().map(move |&j| (i, j)))
            .map(|(i, j)| m.get(i, j))
            .sum()
    };
    let pairs = |s: usize| s * s.saturating_sub(1) / 2;
    let within_pairs = pairs(p.a.len()) + pairs(p.b.len());
    let across_pairs = p.a.len() * p.b.len();

    let mean_within =
        (within_pairs > 0).then(|| (within_sum(&p.a) + within_sum(&p.b)) / within_pairs as f64);
    let mean_across = (across_pairs > 0).then(|| cut_weight(m, p) / across_pairs as f64);
    let ratio = match (mean_within, mean_across) {
        (Some(w), Some(x)) if x > 0.0 => Some(w / x),
        (Some(w), Some(_)) if w > 0.0 => Some(f64::INFINITY),
        _ => None,
    };
    Ok(Contrast { mean_within, mean_across, ratio })
}

/// `|mean(v2 over T1) - mean(v2 over T2)|` after scaling `v2` to unit norm.
pub fn team_separation(v2: &[f64], t1: &[usize], t2: &[usize]) -> Result<f64> {
    if t1.is_empty() || t2.is_empty() {
        return Err(Error::InvalidPartition("team is empty".into()));
    }
    if let Some(&i) = t1.iter().chain(t2).find(|&&i| i >= v2.len()) {
        return Err(Error::InvalidPartition(format!("index {i} out of range")));
    }
    if t1.iter().any(|i| t2.contains(i)) {
        return Err(Error::InvalidPartition("teams overlap".into()));
    }
    let norm = v2.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    let mean = |t: &[usize]| t.iter().map(|&i| v2[i] * scale).sum::<f64>() / t.len() as f64;
    Ok((mean(t1) - mean(t2)).abs())
}

/// Two equal blocks of size `m`: within-block weight `a`, across-block `b`.
pub fn planted_block(m: usize, a: f64, b: f64) -> Result<MiMatrix> {
    if m < 1 {
        return Err(Error::InvalidConfig("block size must be at least 1".into()));
    }
    if !(a > b && b >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidConfig(format!("planted block needs a > b >= 0, got a = {a}, b = {b}")));
    }
    MiMatrix::from_fn(2 * m, |i, j| if (i < m) == (j < m) { a } else { b })
}

/// The planted split `{0..m} | {m..2m}`.
pub fn planted_split(m: usize) -> Partition {
    Partition::new((0..m).collect(), (m..2 * m).collect())
}

/// Exhaustive minimum-Ncut bipartition; ties go to the lexicographically
/// smallest side containing node 0.
pub fn brute_force_min_ncut(m: &MiMatrix) -> Result<Partition> {
    let n = m.n();
    if n < 2 {
        return Err(Error::InvalidMatrix(format!("need at least 2 nodes, got {n}")));
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { n, limit: BRUTE_FORCE_LIMIT });
    }
    let mut best: Option<(f64, Partition)> = None;
    // Bit k of `mask` puts node k + 1 on side B; node 0 always stays in A.
    for mask in 1u32..(1u32 << (n - 1)) {
        let in_a: Vec<bool> = (0..n).map(|i| i == 0 || mask & (1 << (i - 1)) == 0).collect();
        let p = Partition::from_mask(&in_a);
        let score = cut_statistics(m, &p)?.ncut;
        let better = match &best {
            None => true,
            Some((s, q)) => {
                let tie = (score == *s) || (score - s).abs() <= 1e-12 * s.abs().max(1e-300);
                if tie {
                    p.a < q.a
                } else {
                    score < *s
                }
            }
        };
        if better {
            best = Some((score, p));
        }
    }
    Ok(best.expect("n >= 2 has at least one bipartition").1)
}
