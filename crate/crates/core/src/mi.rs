//! Binned plug-in mutual information and the neuron-pair averaged MI matrix.
//!
//! Each neuron's activation series is discretized independently (equal-width
//! or empirical-quantile bins), and the MI between two agents is the mean of
//! the plug-in MI over all cross combinations of randomly sampled neurons.
//! All quantities are in nats.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::HiddenStateDataset;
use crate::error::{Error, Result};
use crate::mi_matrix::MiMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinStrategy {
    Uniform,
    Quantile,
}

impl std::str::FromStr for BinStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(BinStrategy::Uniform),
            "quantile" => Ok(BinStrategy::Quantile),
            other => Err(Error::InvalidConfig(format!("unknown bin strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiEstimationConfig {
    pub n_bins: usize,
    pub strategy: BinStrategy,
    pub n_pairs: usize,
    pub rng_seed: u64,
}

impl MiEstimationConfig {
    /// 8 uniform bins, 8 neuron pairs: the setting used for small policy networks.
    pub fn rl(rng_seed: u64) -> Self {
        Self { n_bins: 8, strategy: BinStrategy::Uniform, n_pairs: 8, rng_seed }
    }

    /// 8 quantile bins, 32 neuron pairs: the setting used for language-model activations.
    pub fn llm(rng_seed: u64) -> Self {
        Self { n_bins: 8, strategy: BinStrategy::Quantile, n_pairs: 32, rng_seed }
    }

    pub fn validate_for(&self, dataset: &HiddenStateDataset) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::InvalidConfig(format!("n_bins = {} < 2", self.n_bins)));
        }
        if self.n_pairs < 1 {
            return Err(Error::InvalidConfig("n_pairs must be at least 1".into()));
        }
        for (id, d) in dataset.agent_ids().iter().zip(dataset.dims()) {
            if self.n_pairs > d {
                return Err(Error::InvalidConfig(format!(
                    "n_pairs = {} exceeds dimension {d} of agent {id:?}",
                    self.n_pairs
                )));
            }
        }
        Ok(())
    }
}

impl Default for MiEstimationConfig {
    fn default() -> Self {
        Self::rl(0)
    }
}

/// Maps a real series onto bin indices in `0..n_bins`.
///
/// Uniform bins split `[min, max]` into equal widths; quantile bins put edges at
/// linearly interpolated empirical quantiles, and duplicate edges (ties) are
/// collapsed, so fewer than `n_bins` bins may be used. A value equal to an
/// inner edge goes to the upper bin. A constant series maps to bin 0.
pub fn discretize(series: &[f64], n_bins: usize, strategy: BinStrategy) -> Result<Vec<usize>> {
    if series.len() < 2 {
        return Err(Error::TooFewSamples { min: 2, got: series.len() });
    }
    if n_bins < 2 {
        return Err(Error::InvalidConfig(format!("n_bins = {n_bins} < 2")));
    }
    if let Some((sample, &value)) = series.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { sample, value });
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return Ok(vec![0; series.len()]);
    }
    let inner: Vec<f64> = match strategy {
        BinStrategy::Uniform => (1..n_bins)
            .map(|k| lo + (hi - lo) * k as f64 / n_bins as f64)
            .collect(),
        BinStrategy::Quantile => {
            let mut sorted = series.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut edges: Vec<f64> = (0..=n_bins)
                .map(|k| quantile_sorted(&sorted, k as f64 / n_bins as f64))
                .collect();
            edges.dedup_by(|b, a| *b - *a <= 1e-8);
            if edges.len() < 2 {
                return Ok(vec![0; series.len()]);
            }
            edges[1..edges.len() - 1].to_vec()
        }
    };
    Ok(series
        .iter()
        .map(|&v| inner.partition_point(|&e| e <= v))
        .collect())
}

/// Linear-interpolation quantile of an ascending slice, `q` in `[0, 1]`.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Plug-in Shannon entropy (nats) of a discrete sample.
pub fn plugin_entropy(x: &[usize]) -> f64 {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &v in x {
        *counts.entry(v).or_default() += 1;
    }
    entropy_of_counts(counts.values().copied(), x.len())
}

fn entropy_of_counts(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    -counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Plug-in MI `H(X) + H(Y) - H(X,Y)` from the joint count table, in nats.
pub fn mi_discrete(x: &[usize], y: &[usize]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples { min: 2, got: x.len() });
    }
    let bx = x.iter().max().map_or(0, |m| m + 1);
    let by = y.iter().max().map_or(0, |m| m + 1);
    Ok(mi_dense(x, y, bx, by))
}

fn mi_dense(x: &[usize], y: &[usize], bx: usize, by: usize) -> f64 {
    let n = x.len();
    let mut joint = vec![0usize; bx * by];
    let mut cx = vec![0usize; bx];
    let mut cy = vec![0usize; by];
    for (&a, &b) in x.iter().zip(y) {
        joint[a * by + b] += 1;
        cx[a] += 1;
        cy[b] += 1;
    }
    let hx = entropy_of_counts(cx.into_iter(), n);
    let hy = entropy_of_counts(cy.into_iter(), n);
    let hxy = entropy_of_counts(joint.into_iter(), n);
    hx + hy - hxy
}

fn stream_key(a: &str, b: &str) -> u64 {
    // FNV-1a over "a\0b": stable across runs and platforms.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in a.bytes().chain(std::iter::once(0)).chain(b.bytes()) {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Neuron indices of `agent` used when it is paired with `partner`.
///
/// Drawn without replacement from a ChaCha stream keyed by the seed and both
/// agent ids, so adding or removing other agents never changes the draw.
pub fn sampled_neurons(seed: u64, agent: &str, partner: &str, dim: usize, n_pairs: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_key(agent, partner));
    sample(&mut rng, dim, n_pairs).into_vec()
}

/// Pairwise MI matrix averaged over `n_pairs x n_pairs` sampled neuron pairs.
pub fn estimate_mi_matrix(dataset: &HiddenStateDataset, cfg: &MiEstimationConfig) -> Result<MiMatrix> {
    cfg.validate_for(dataset)?;
    let n = dataset.n_agents();
    let ids = dataset.agent_ids();

    // Bin every neuron once; sampling then just picks columns.
    let binned: Vec<Vec<Vec<usize>>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let m = dataset.states(a);
            (0..m.ncols())
                .map(|k| {
                    let series: Vec<f64> = m.column(k).iter().map(|&v| f64::from(v)).collect();
                    discretize(&series, cfg.n_bins, cfg.strategy)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let estimates: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let ni = sampled_neurons(cfg.rng_seed, &ids[i], &ids[j], binned[i].len(), cfg.n_pairs);
            let nj = sampled_neurons(cfg.rng_seed, &ids[j], &ids[i], binned[j].len(), cfg.n_pairs);
            let mut total = 0.0;
            for &p in &ni {
                for &q in &nj {
                    let (x, y) = (&binned[i][p], &binned[j][q]);
                    total += mi_dense(x, y, cfg.n_bins, cfg.n_bins).max(0.0);
                }
            }
            total / (cfg.n_pairs * cfg.n_pairs) as f64
        })
        .collect();

    let mut values = Array2::zeros((n, n));
    for (&(i, j), &v) in pairs.iter().zip(&estimates) {
        values[[i, j]] = v;
        values[[j, i]] = v;
    }
    MiMatrix::new(ids.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SampleKind;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_halves() {
        let b = discretize(&[0.0, 1.0, 2.0, 3.0], 2, BinStrategy::Uniform).unwrap();
        assert_eq!(b, vec![0, 0, 1, 1]);
    }

    #[test]
    fn constant_series_is_bin_zero() {
        for s in [BinStrategy::Uniform, BinStrategy::Quantile] {
            assert_eq!(discretize(&[5.0, 5.0, 5.0], 4, s).unwrap(), vec![0, 0, 0]);
        }
    }

    #[test]
    fn nonfinite_reports_sample() {
        let err = discretize(&[0.0, f64::NAN, 1.0], 2, BinStrategy::Uniform).unwrap_err();
        assert!(matches!(err, Error::NonFinite { sample: 1, .. }));
        let err = discretize(&[0.0, 1.0, f64::INFINITY], 2, BinStrategy::Quantile).unwrap_err();
        assert!(matches!(err, Error::NonFinite { sample: 2, .. }));
    }

    #[test]
    fn max_lands_in_last_bin() {
        let b = discretize(&[0.0, 0.5, 1.0], 8, BinStrategy::Uniform).unwrap();
        assert_eq!(b, vec![0, 4, 7]);
    }

    #[test]
    fn quantile_ties_collapse_bins() {
        // Seven of ten values tie at zero, so most quantile edges coincide.
        let s = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0];
        let b = discretize(&s, 8, BinStrategy::Quantile).unwrap();
        assert!(b[..7].iter().all(|&v| v == 0));
        let used: std::collections::BTreeSet<_> = b.iter().collect();
        assert!(used.len() < 8);
        assert!(b.iter().all(|&v| v < 8));
    }

    #[test]
    fn identical_fair_binary_is_ln2() {
        let x = [0, 1, 0, 1];
        assert_abs_diff_eq!(mi_discrete(&x, &x).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn independent_counts_give_zero() {
        let mi = mi_discrete(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_abs_diff_eq!(mi, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn three_by_two_table() {
        // Joint counts: (0,1)=2, (1,0)=1, (2,0)=1 over 4 samples.
        let (x, y) = ([0, 0, 1, 2], [1, 1, 0, 0]);
        let p = |c: f64| c / 4.0;
        let hx = -(p(2.0) * p(2.0).ln() + 2.0 * p(1.0) * p(1.0).ln());
        let hy = -(2.0 * p(2.0) * p(2.0).ln());
        let hxy = -(p(2.0) * p(2.0).ln() + 2.0 * p(1.0) * p(1.0).ln());
        assert_abs_diff_eq!(mi_discrete(&x, &y).unwrap(), hx + hy - hxy, epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            mi_discrete(&[0, 1], &[0, 1, 1]).unwrap_err(),
            Error::LengthMismatch { left: 2, right: 3 }
        );
    }

    #[test]
    fn neuron_sampling_ignores_other_agents() {
        let a = sampled_neurons(9, "agent-0", "agent-1", 32, 8);
        let b = sampled_neurons(9, "agent-0", "agent-1", 32, 8);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
        assert_ne!(a, sampled_neurons(9, "agent-0", "agent-2", 32, 8));
    }

    fn shared_scalar_dataset() -> HiddenStateDataset {
        let n_samples = 60;
        let states = (0..4)
            .map(|a| {
                Array2::from_shape_fn((n_samples, 3), |(s, k)| {
                    ((s * 7919) % 61) as f32 * (1.0 + 0.0 * (a + k) as f32)
                })
            })
            .collect();
        HiddenStateDataset::new(
            (0..4).map(|i| format!("a{i}")).collect(),
            states,
            SampleKind::Episode,
        )
        .unwrap()
    }

    #[test]
    fn shared_scalar_gives_equal_positive_entries() {
        let ds = shared_scalar_dataset();
        let m = estimate_mi_matrix(&ds, &MiEstimationConfig { n_pairs: 2, ..MiEstimationConfig::rl(3) }).unwrap();
        let first = m.get(0, 1);
        assert!(first > 0.0);
        for i in 0..4 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..4 {
                if i != j {
                    assert_eq!(m.get(i, j), first);
                }
            }
        }
    }

    #[test]
    fn rejects_too_many_pairs() {
        let ds = shared_scalar_dataset();
        let cfg = MiEstimationConfig { n_pairs: 4, ..MiEstimationConfig::rl(0) };
        assert!(matches!(estimate_mi_matrix(&ds, &cfg), Err(Error::InvalidConfig(_))));
    }
}
