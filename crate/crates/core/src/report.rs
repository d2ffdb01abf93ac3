//! Serializable experiment reports whose aggregates can be recomputed from
//! the per-seed records they summarize.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::stats::{bootstrap_ci, mean, paired_t_test, Interval, TTest, DEFAULT_RESAMPLES};

/// Seed used for every bootstrap interval inside a report.
pub const REPORT_BOOTSTRAP_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    /// Numeric metrics; only these are aggregated.
    pub metrics: BTreeMap<String, f64>,
    /// Anything else worth keeping (partitions, flags, spectral records).
    #[serde(default)]
    pub details: BTreeMap<String, Value>,
}

impl SeedRecord {
    pub fn new(seed: u64) -> Self {
        Self { seed, metrics: BTreeMap::new(), details: BTreeMap::new() }
    }

    pub fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.to_owned(), value);
        self
    }

    pub fn detail(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.details.insert(key.to_owned(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub ci95: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub x: String,
    pub y: String,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub records: Vec<SeedRecord>,
    pub aggregates: BTreeMap<String, Aggregate>,
    #[serde(default)]
    pub comparisons: Vec<PairedComparison>,
    pub config: Value,
}

impl ExperimentReport {
    /// Builds the report and fills aggregates for every finite metric present
    /// in all records.
    pub fn new(experiment: &str, records: Vec<SeedRecord>, config: Value) -> Result<Self> {
        let mut report = Self {
            experiment: experiment.to_owned(),
            seeds: records.iter().map(|r| r.seed).collect(),
            records,
            aggregates: BTreeMap::new(),
            comparisons: Vec::new(),
            config,
        };
        report.aggregates = report.compute_aggregates()?;
        Ok(report)
    }

    pub fn metric_values(&self, key: &str) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.metrics.get(key).copied()).collect()
    }

    fn compute_aggregates(&self) -> Result<BTreeMap<String, Aggregate>> {
        let mut out = BTreeMap::new();
        let Some(first) = self.records.first() else {
            return Ok(out);
        };
        for key in first.metrics.keys() {
            let Some(values) = self.metric_values(key) else { continue };
            if values.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let ci95 = bootstrap_ci(&values, DEFAULT_RESAMPLES, 0.95, REPORT_BOOTSTRAP_SEED)?;
            out.insert(key.clone(), Aggregate { n: values.len(), mean: mean(&values), ci95 });
        }
        Ok(out)
    }

    /// Adds a paired t-test between two metrics across seeds.
    pub fn compare(&mut self, x: &str, y: &str) -> Result<&PairedComparison> {
        let xs = self
            .metric_values(x)
            .ok_or_else(|| Error::InvalidConfig(format!("metric {x:?} missing")))?;
        let ys = self
            .metric_values(y)
            .ok_or_else(|| Error::InvalidConfig(format!("metric {y:?} missing")))?;
        let test = paired_t_test(&xs, &ys)?;
        self.comparisons.push(PairedComparison { x: x.to_owned(), y: y.to_owned(), test });
        Ok(self.comparisons.last().expect("just pushed"))
    }

    /// Largest absolute disagreement between stored and recomputed aggregates.
    pub fn recompute_error(&self) -> Result<f64> {
        let fresh = self.compute_aggregates()?;
        if fresh.keys().ne(self.aggregates.keys()) {
            return Ok(f64::INFINITY);
        }
        let mut worst = 0.0f64;
        for (k, a) in &self.aggregates {
            let b = &fresh[k];
            if a.n != b.n {
                return Ok(f64::INFINITY);
            }
            worst = worst
                .max((a.mean - b.mean).abs())
                .max((a.ci95.lo - b.ci95.lo).abs())
                .max((a.ci95.hi - b.ci95.hi).abs());
        }
        for c in &self.comparisons {
            let xs = self.metric_values(&c.x).unwrap_or_default();
            let ys = self.metric_values(&c.y).unwrap_or_default();
            let t = paired_t_test(&xs, &ys)?;
            worst = worst.max((t.t - c.test.t).abs()).max((t.p - c.test.p).abs());
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("report json: {e}")))
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut out = format!("experiment: {}\nseeds: {:?}\n", self.experiment, self.seeds);
        for (k, a) in &self.aggregates {
            out.push_str(&format!(
                "{k:<32} mean {:>10.4}  95% CI [{:.4}, {:.4}]  (n={})\n",
                a.mean, a.ci95.lo, a.ci95.hi, a.n
            ));
        }
        for c in &self.comparisons {
            out.push_str(&format!(
                "paired t {} vs {}: t = {:.3}, p = {:.4}, dof = {}\n",
                c.x, c.y, c.test.t, c.test.p, c.test.dof
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample_report() -> ExperimentReport {
        let records = [(1u64, 0.5, 0.1), (2, 0.7, 0.2), (3, 0.6, 0.4)]
            .iter()
            .map(|&(seed, s, t)| {
                let mut r = SeedRecord::new(seed);
                r.metric("s", s).metric("t", t).detail("partition", "0,1|2,3");
                r
            })
            .collect();
        ExperimentReport::new("demo", records, json!({"k": 1})).unwrap()
    }

    #[test]
    fn aggregates_recompute_exactly() {
        let mut r = sample_report();
        r.compare("s", "t").unwrap();
        assert_eq!(r.seeds, vec![1, 2, 3]);
        assert!((r.aggregates["s"].mean - 0.6).abs() < 1e-12);
        assert!(r.recompute_error().unwrap() <= 1e-9);
        let back = ExperimentReport::from_json(&r.to_json()).unwrap();
        assert!(back.recompute_error().unwrap() <= 1e-9);
    }

    #[test]
    fn tampered_aggregate_is_detected() {
        let mut r = sample_report();
        r.aggregates.get_mut("s").unwrap().mean += 0.01;
        assert!(r.recompute_error().unwrap() > 1e-3);
    }
}
