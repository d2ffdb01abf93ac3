//! The hierarchical coordination game: configuration, inputs and rewards.

use rand::Rng;
use serde::{Deserialize, Serialize};

use coalition_core::{BinStrategy, DecompositionConfig, MiEstimationConfig};

use crate::error::{Result, SimError};
use crate::policy::{DEFAULT_LR, N_ACTIONS};

/// Bonus paid to both members of a sub-pair that pick the same action.
pub const SUB_PAIR_BONUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapConfig {
    pub episode: usize,
    pub agents: (usize, usize),
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self { episode: 10_000, agents: (2, 4) }
    }
}

/// What each agent's reward is compared against in the policy-gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// Rolling mean of the team's mean episode reward, one value for all agents.
    #[default]
    Shared,
    /// Rolling mean of each agent's own episode rewards.
    PerAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementConfig {
    pub batch: usize,
    pub bins: usize,
    pub strategy: BinStrategy,
    pub n_pairs: usize,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self { batch: 150, bins: 8, strategy: BinStrategy::Uniform, n_pairs: 8 }
    }
}

impl MeasurementConfig {
    pub fn mi_config(&self, seed: u64) -> MiEstimationConfig {
        MiEstimationConfig { n_bins: self.bins, strategy: self.strategy, n_pairs: self.n_pairs, rng_seed: seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub groups: Vec<Vec<usize>>,
    pub sub_pairs: Vec<Vec<usize>>,
    pub episodes: usize,
    pub swap: Option<SwapConfig>,
    pub lr: f64,
    pub baseline_window: usize,
    pub baseline: BaselineMode,
    pub measurement: MeasurementConfig,
    pub decomposition: DecompositionConfig,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            groups: vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9, 10, 11]],
            sub_pairs: vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9], vec![10, 11]],
            episodes: 20_000,
            swap: None,
            lr: DEFAULT_LR,
            baseline_window: 200,
            baseline: BaselineMode::default(),
            measurement: MeasurementConfig::default(),
            decomposition: DecompositionConfig::default(),
        }
    }
}

impl HierarchyConfig {
    /// Default game extended to 25000 episodes with agents 2 and 4 swapping
    /// groups at episode 10000.
    pub fn swap_default() -> Self {
        Self { episodes: 25_000, swap: Some(SwapConfig::default()), ..Self::default() }
    }

    pub fn n_agents(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Identity one-hot, group-target one-hot, sub-pair-target one-hot.
    pub fn input_dim(&self) -> usize {
        self.n_agents() + 2 * N_ACTIONS
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents();
        let mut seen = vec![false; n];
        for &i in self.groups.iter().flatten() {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(SimError::Config(format!("groups do not partition 0..{n} (agent {i})")));
            }
        }
        if self.groups.iter().any(Vec::is_empty) {
            return Err(SimError::Config("empty group".into()));
        }
        let mut in_pair = vec![false; n];
        for pair in &self.sub_pairs {
            if pair.len() < 2 {
                return Err(SimError::Config(format!("sub-pair {pair:?} has fewer than 2 agents")));
            }
            if !self.groups.iter().any(|g| pair.iter().all(|i| g.contains(i))) {
                return Err(SimError::Config(format!("sub-pair {pair:?} is not inside one group")));
            }
            for &i in pair {
                if std::mem::replace(&mut in_pair[i], true) {
                    return Err(SimError::Config(format!("agent {i} is in two sub-pairs")));
                }
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SimError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.baseline_window == 0 {
            return Err(SimError::Config("baseline window must be at least 1".into()));
        }
        if self.measurement.batch < 2 {
            return Err(SimError::Config("measurement batch must be at least 2".into()));
        }
        if let Some(swap) = self.swap {
            let (a, b) = swap.agents;
            if a >= n || b >= n || a == b {
                return Err(SimError::Config(format!("invalid swap agents ({a}, {b})")));
            }
            if self.group_of(a) == self.group_of(b) {
                return Err(SimError::Config("swapped agents must be in different groups".into()));
            }
            if swap.episode >= self.episodes {
                return Err(SimError::Config(format!(
                    "swap episode {} must precede the episode count {}",
                    swap.episode, self.episodes
                )));
            }
        }
        self.decomposition.validate()?;
        Ok(())
    }

    fn group_of(&self, agent: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&agent))
    }

    /// Roles in effect at the start of training.
    pub fn initial_assignment(&self) -> Assignment {
        Assignment { groups: self.groups.clone(), sub_pairs: self.sub_pairs.clone() }
    }

    /// Roles in effect after the swap, or the initial ones without a swap.
    pub fn final_assignment(&self) -> Assignment {
        let mut asg = self.initial_assignment();
        if let Some(swap) = self.swap {
            asg = asg.swapped(swap.agents.0, swap.agents.1);
        }
        asg
    }
}

/// Group and sub-pair membership, each set kept ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub groups: Vec<Vec<usize>>,
    pub sub_pairs: Vec<Vec<usize>>,
}

impl Assignment {
    /// Agents `a` and `b` trade places in every group and sub-pair.
    pub fn swapped(&self, a: usize, b: usize) -> Self {
        let swap_set = |set: &Vec<usize>| {
            let mut s: Vec<usize> = set
                .iter()
                .map(|&i| if i == a { b } else if i == b { a } else { i })
                .collect();
            s.sort_unstable();
            s
        };
        Self {
            groups: self.groups.iter().map(swap_set).collect(),
            sub_pairs: self.sub_pairs.iter().map(swap_set).collect(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn group_of(&self, agent: usize) -> usize {
        self.groups.iter().position(|g| g.contains(&agent)).expect("agent has a group")
    }

    pub fn sub_pair_of(&self, agent: usize) -> Option<usize> {
        self.sub_pairs.iter().position(|p| p.contains(&agent))
    }
}

/// Targets drawn for one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Targets {
    pub group: Vec<usize>,
    pub sub_pair: Vec<usize>,
}

impl Targets {
    pub fn sample<R: Rng + ?Sized>(asg: &Assignment, rng: &mut R) -> Self {
        let group = (0..asg.groups.len()).map(|_| rng.random_range(0..N_ACTIONS)).collect();
        let sub_pair = (0..asg.sub_pairs.len()).map(|_| rng.random_range(0..N_ACTIONS)).collect();
        Self { group, sub_pair }
    }
}

/// Input vector for `agent`. Agents outside every sub-pair get a zero
/// sub-pair segment.
pub fn agent_input(asg: &Assignment, targets: &Targets, agent: usize) -> Vec<f64> {
    let n = asg.n_agents();
    let mut x = vec![0.0; n + 2 * N_ACTIONS];
    x[agent] = 1.0;
    x[n + targets.group[asg.group_of(agent)]] = 1.0;
    if let Some(p) = asg.sub_pair_of(agent) {
        x[n + N_ACTIONS + targets.sub_pair[p]] = 1.0;
    }
    x
}

/// Largest action count within `members`, divided by the member count.
pub fn modal_fraction(actions: &[usize], members: &[usize]) -> f64 {
    let mut counts = [0usize; N_ACTIONS];
    for &i in members {
        counts[actions[i]] += 1;
    }
    *counts.iter().max().unwrap() as f64 / members.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Per agent: every member of its group chose the same action.
    pub group_coordinated: Vec<bool>,
    /// Per agent: its sub-pair partner chose the same action.
    pub sub_pair_coordinated: Vec<bool>,
    /// Fraction of groups whose members all chose the same action.
    pub group_accuracy: f64,
    /// Mean modal fraction over groups.
    pub group_modal_fraction: f64,
    /// Fraction of sub-pairs whose members all matched.
    pub sub_pair_accuracy: f64,
}

/// Scores a joint action under an assignment.
pub fn score_episode(asg: &Assignment, inputs: Vec<Vec<f64>>, actions: Vec<usize>) -> EpisodeRecord {
    let n = asg.n_agents();
    let mut rewards = vec![0.0; n];
    let mut group_coordinated = vec![false; n];
    let mut sub_pair_coordinated = vec![false; n];
    let mut modal_sum = 0.0;
    let mut unanimous_groups = 0;
    for g in &asg.groups {
        let frac = modal_fraction(&actions, g);
        modal_sum += frac;
        let unanimous = g.iter().all(|&i| actions[i] == actions[g[0]]);
        unanimous_groups += usize::from(unanimous);
        for &i in g {
            rewards[i] += frac;
            group_coordinated[i] = unanimous;
        }
    }
    let mut matched_pairs = 0;
    for p in &asg.sub_pairs {
        let matched = p.iter().all(|&i| actions[i] == actions[p[0]]);
        if matched {
            matched_pairs += 1;
            for &i in p {
                rewards[i] += SUB_PAIR_BONUS;
            }
        }
        for &i in p {
            sub_pair_coordinated[i] = matched;
        }
    }
    EpisodeRecord {
        inputs,
        actions,
        rewards,
        group_coordinated,
        sub_pair_coordinated,
        group_accuracy: unanimous_groups as f64 / asg.groups.len() as f64,
        group_modal_fraction: modal_sum / asg.groups.len() as f64,
        sub_pair_accuracy: if asg.sub_pairs.is_empty() {
            1.0
        } else {
            matched_pairs as f64 / asg.sub_pairs.len() as f64
        },
    }
}
