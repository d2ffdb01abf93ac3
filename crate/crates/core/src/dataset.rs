//! Per-agent hidden-state collections.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a single sample row stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    Episode,
    Prompt,
    WindowFrame,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Episode => "episode",
            SampleKind::Prompt => "prompt",
            SampleKind::WindowFrame => "window-frame",
        }
    }
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "episode" => Ok(SampleKind::Episode),
            "prompt" => Ok(SampleKind::Prompt),
            "window-frame" => Ok(SampleKind::WindowFrame),
            other => Err(Error::InvalidDataset(format!("unknown sample kind {other:?}"))),
        }
    }
}

/// Hidden activations of `n` agents observed over the same `N` samples.
///
/// Agent `i` owns an `N x d_i` matrix; row `s` is its hidden vector on sample `s`.
/// Values are stored at 32-bit precision, which is also the on-disk precision.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateDataset {
    agent_ids: Vec<String>,
    states: Vec<Array2<f32>>,
    sample_kind: SampleKind,
}

impl HiddenStateDataset {
    pub fn new(
        agent_ids: Vec<String>,
        states: Vec<Array2<f32>>,
        sample_kind: SampleKind,
    ) -> Result<Self> {
        if agent_ids.is_empty() {
            return Err(Error::InvalidDataset("no agents".into()));
        }
        if agent_ids.len() != states.len() {
            return Err(Error::InvalidDataset(format!(
                "{} agent ids for {} state matrices",
                agent_ids.len(),
                states.len()
            )));
        }
        for (i, id) in agent_ids.iter().enumerate() {
            if agent_ids[..i].contains(id) {
                return Err(Error::InvalidDataset(format!("duplicate agent id {id:?}")));
            }
        }
        let n_samples = states[0].nrows();
        if n_samples < 2 {
            return Err(Error::TooFewSamples { min: 2, got: n_samples });
        }
        for (id, m) in agent_ids.iter().zip(&states) {
            if m.nrows() != n_samples {
                return Err(Error::InvalidDataset(format!(
                    "agent {id:?} has {} samples, expected {n_samples}",
                    m.nrows()
                )));
            }
            if m.ncols() == 0 {
                return Err(Error::InvalidDataset(format!("agent {id:?} has zero dimensions")));
            }
            if let Some(((s, _), v)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite { sample: s, value: f64::from(*v) });
            }
        }
        Ok(Self { agent_ids, states, sample_kind })
    }

    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.states[0].nrows()
    }

    pub fn agent_ids(&self) -> &[String] {
        &self.agent_ids
    }

    pub fn sample_kind(&self) -> SampleKind {
        self.sample_kind
    }

    pub fn dims(&self) -> Vec<usize> {
        self.states.iter().map(|m| m.ncols()).collect()
    }

    pub fn states(&self, agent: usize) -> &Array2<f32> {
        &self.states[agent]
    }

    /// Activation series of one neuron across all samples.
    pub fn neuron(&self, agent: usize, neuron: usize) -> ArrayView1<'_, f32> {
        self.states[agent].column(neuron)
    }

    /// Reorder samples with the same index map for every agent (used for
    /// bootstrap replicates).
    pub fn select_samples(&self, rows: &[usize]) -> Result<Self> {
        let states = self
            .states
            .iter()
            .map(|m| m.select(ndarray::Axis(0), rows))
            .collect();
        Self::new(self.agent_ids.clone(), states, self.sample_kind)
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<Array2<f32>>, SampleKind) {
        (self.agent_ids, self.states, self.sample_kind)
    }
}
