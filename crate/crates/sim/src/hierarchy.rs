//! Training runs for the hierarchical game and the mid-training swap.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use coalition_core::decompose::TimelineEntry;
use coalition_core::{
    clean_level1, estimate_mi_matrix, recursive_decompose, track_partitions, CoalitionTree, ExperimentReport,
    HiddenStateDataset, MiMatrix, PartitionTimeline, SampleKind, SeedRecord,
};

use crate::error::{Result, SimError};
use crate::game::{agent_input, BaselineMode, score_episode, Assignment, EpisodeRecord, HierarchyConfig, Targets};
use crate::policy::{PolicyAgent, HIDDEN_DIM};

/// Stream ids carved out of one run seed.
pub(crate) mod streams {
    pub const ENV: u64 = 0;
    pub const MEASURE: u64 = 1;
    pub const AGENT_BASE: u64 = 1000;
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rolling mean of the most recent rewards.
#[derive(Debug, Clone)]
pub struct RollingBaseline {
    window: usize,
    history: VecDeque<f64>,
}

impl RollingBaseline {
    pub fn new(window: usize) -> Self {
        Self { window, history: VecDeque::with_capacity(window) }
    }

    /// Mean over the stored rewards, 0 before any reward has been seen.
    pub fn value(&self) -> f64 {
        if self.history.is_empty() {
            0.0
        } else {
            self.history.iter().sum::<f64>() / self.history.len() as f64
        }
    }

    pub fn push(&mut self, r: f64) {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(r);
    }
}

/// Agents, baselines and the environment stream for one run.
pub struct Trainer {
    pub cfg: HierarchyConfig,
    pub agents: Vec<PolicyAgent>,
    baselines: Vec<RollingBaseline>,
    env_rng: ChaCha8Rng,
    episode: usize,
}

/// One training episode plus the hidden layers observed while acting.
pub struct TrainedEpisode {
    pub record: EpisodeRecord,
    pub hidden: Option<Vec<Vec<f64>>>,
}

impl Trainer {
    pub fn new(seed: u64, cfg: &HierarchyConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_agents();
        let agents = (0..n)
            .map(|i| PolicyAgent::new(cfg.input_dim(), cfg.lr, stream_rng(seed, streams::AGENT_BASE + i as u64)))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            agents,
            baselines: vec![
                RollingBaseline::new(cfg.baseline_window);
                match cfg.baseline {
                    BaselineMode::Shared => 1,
                    BaselineMode::PerAgent => n,
                }
            ],
            env_rng: stream_rng(seed, streams::ENV),
            episode: 0,
        })
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn assignment(&self) -> Assignment {
        match self.cfg.swap {
            Some(s) if self.episode >= s.episode => self.cfg.final_assignment(),
            _ => self.cfg.initial_assignment(),
        }
    }

    /// Plays one episode and applies one policy-gradient step per agent.
    pub fn step(&mut self, capture_hidden: bool) -> Result<TrainedEpisode> {
        let asg = self.assignment();
        let targets = Targets::sample(&asg, &mut self.env_rng);
        let n = self.agents.len();
        let mut inputs = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let x = agent_input(&asg, &targets, i);
            outputs.push(agent.forward(&x, capture_hidden)?);
            inputs.push(x);
        }
        let actions = outputs.iter().map(|o| o.action).collect();
        let record = score_episode(&asg, inputs, actions);
        let team = record.rewards.iter().sum::<f64>() / n as f64;
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let r = record.rewards[i];
            let b = match self.cfg.baseline {
                BaselineMode::Shared => &self.baselines[0],
                BaselineMode::PerAgent => &self.baselines[i],
            };
            agent.reinforce_update(&[outputs[i].step()], &[r], b.value())?;
        }
        match self.cfg.baseline {
            BaselineMode::Shared => self.baselines[0].push(team),
            BaselineMode::PerAgent => {
                for (b, &r) in self.baselines.iter_mut().zip(&record.rewards) {
                    b.push(r);
                }
            }
        }
        self.episode += 1;
        let hidden = capture_hidden.then(|| outputs.into_iter().map(|o| o.hidden.unwrap()).collect());
        Ok(TrainedEpisode { record, hidden })
    }

    /// Hidden layers of every agent on `batch` fresh episodes under the current
    /// assignment. Measurement draws from its own stream and leaves the agents
    /// untouched.
    pub fn measure(&self, seed: u64) -> Result<HiddenStateDataset> {
        let asg = self.assignment();
        let mut rng = stream_rng(seed, streams::MEASURE);
        let batch = self.cfg.measurement.batch;
        let n = self.agents.len();
        let mut states = vec![Array2::<f32>::zeros((batch, HIDDEN_DIM)); n];
        for s in 0..batch {
            let targets = Targets::sample(&asg, &mut rng);
            for (i, agent) in self.agents.iter().enumerate() {
                let h = agent.net.hidden(&agent_input(&asg, &targets, i))?;
                for (k, v) in h.into_iter().enumerate() {
                    states[i][[s, k]] = v as f32;
                }
            }
        }
        Ok(HiddenStateDataset::new(agent_ids(n), states, SampleKind::Episode)?)
    }
}

pub fn agent_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Per-episode training curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoordinationCurves {
    pub group: Vec<f64>,
    pub sub_pair: Vec<f64>,
    /// Mean reward over agents.
    pub reward: Vec<f64>,
}

impl CoordinationCurves {
    pub fn push(&mut self, rec: &EpisodeRecord) {
        self.group.push(rec.group_accuracy);
        self.sub_pair.push(rec.sub_pair_accuracy);
        self.reward.push(rec.rewards.iter().sum::<f64>() / rec.rewards.len() as f64);
    }

    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    /// Means of each curve over episodes `start..end` (clamped).
    pub fn window_mean(&self, start: usize, end: usize) -> Option<(f64, f64, f64)> {
        let end = end.min(self.len());
        if start >= end {
            return None;
        }
        let m = |v: &[f64]| v[start..end].iter().sum::<f64>() / (end - start) as f64;
        Some((m(&self.group), m(&self.sub_pair), m(&self.reward)))
    }

    /// Curves averaged over consecutive blocks of `block` episodes, as CSV.
    pub fn to_csv(&self, block: usize) -> String {
        let block = block.max(1);
        let mut out = String::from("episode_start,episode_end,group,sub_pair,reward\n");
        let mut start = 0;
        while start < self.len() {
            let end = (start + block).min(self.len());
            let (g, s, r) = self.window_mean(start, end).unwrap();
            out.push_str(&format!("{start},{end},{g:.6},{s:.6},{r:.6}\n"));
            start = end;
        }
        out
    }
}

/// Episodes averaged when reading coordination "by episode 5000".
pub const CONVERGENCE_EPISODE: usize = 5_000;
pub const CONVERGENCE_SPAN: usize = 500;

/// A sub-pair counts as recovered when some node of the hierarchy consists of
/// exactly its members.
pub fn sub_pair_recovered(tree: &CoalitionTree, pair: &[usize]) -> bool {
    tree.contains_set(pair)
}

/// Hierarchy-recovery summary for one tree against one assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub level1_clean: bool,
    pub groups_as_nodes: usize,
    pub sub_pairs_recovered: usize,
    pub n_groups: usize,
    pub n_sub_pairs: usize,
}

impl Recovery {
    pub fn evaluate(tree: &CoalitionTree, asg: &Assignment) -> Result<Self> {
        let root = &tree.spectral.as_ref().expect("root of a 2+ agent tree has a spectrum").partition;
        Ok(Self {
            level1_clean: root.is_proper() && clean_level1(root, &asg.groups)?,
            groups_as_nodes: asg.groups.iter().filter(|g| tree.contains_set(g)).count(),
            sub_pairs_recovered: asg.sub_pairs.iter().filter(|p| sub_pair_recovered(tree, p)).count(),
            n_groups: asg.groups.len(),
            n_sub_pairs: asg.sub_pairs.len(),
        })
    }

    pub fn all_sub_pairs(&self) -> bool {
        self.sub_pairs_recovered == self.n_sub_pairs
    }

    /// Every group and every sub-pair appears as a node of the hierarchy.
    pub fn full(&self) -> bool {
        self.groups_as_nodes == self.n_groups && self.all_sub_pairs()
    }
}

pub struct HierarchicalRun {
    pub seed: u64,
    pub cfg: HierarchyConfig,
    pub agents: Vec<PolicyAgent>,
    pub curves: CoordinationCurves,
    pub hidden: HiddenStateDataset,
    pub mi: MiMatrix,
    pub tree: CoalitionTree,
    pub recovery: Recovery,
    pub record: SeedRecord,
}

impl HierarchicalRun {
    pub fn report(&self) -> Result<ExperimentReport> {
        Ok(ExperimentReport::new("hierarchical", vec![self.record.clone()], serde_json::to_value(&self.cfg).unwrap())?)
    }
}

fn tree_metrics(record: &mut SeedRecord, mi: &MiMatrix, tree: &CoalitionTree, rec: &Recovery) {
    let root = tree.spectral.as_ref().unwrap();
    record
        .metric("level1_clean", f64::from(u8::from(rec.level1_clean)))
        .metric("groups_as_nodes", rec.groups_as_nodes as f64)
        .metric("sub_pairs_recovered", rec.sub_pairs_recovered as f64)
        .metric("root_lambda2", root.lambda2)
        .metric("root_phi", root.phi_spectral)
        .metric("total_cross_mi", coalition_core::total_cross_mi(mi))
        .detail("root_partition", root.partition.to_string())
        .detail("tree", tree.render_text(None))
        .detail("leaves", json!(tree.leaves().iter().map(|l| l.nodes.clone()).collect::<Vec<_>>()));
    if let Some(r) = root.ratio_r.filter(|r| r.is_finite()) {
        record.metric("root_r", r);
    }
}

/// Trains the hierarchical game, then measures hidden states and decomposes
/// the resulting MI graph.
pub fn run_hierarchical(seed: u64, cfg: &HierarchyConfig) -> Result<HierarchicalRun> {
    let mut trainer = Trainer::new(seed, cfg)?;
    let mut curves = CoordinationCurves::default();
    for _ in 0..cfg.episodes {
        curves.push(&trainer.step(false)?.record);
    }
    let hidden = trainer.measure(seed)?;
    let mi = estimate_mi_matrix(&hidden, &cfg.measurement.mi_config(seed))?;
    let tree = recursive_decompose(&mi, &cfg.decomposition, None)?;
    let recovery = Recovery::evaluate(&tree, &trainer.assignment())?;

    let mut record = SeedRecord::new(seed);
    if let Some((g, s, _)) =
        curves.window_mean(CONVERGENCE_EPISODE.saturating_sub(CONVERGENCE_SPAN), CONVERGENCE_EPISODE)
    {
        record.metric("group_coord_at_5000", g).metric("sub_pair_coord_at_5000", s);
    }
    if let Some((g, s, r)) = curves.window_mean(curves.len().saturating_sub(CONVERGENCE_SPAN), curves.len()) {
        record.metric("final_group_coord", g).metric("final_sub_pair_coord", s).metric("final_reward", r);
    }
    tree_metrics(&mut record, &mi, &tree, &recovery);

    Ok(HierarchicalRun {
        seed,
        cfg: cfg.clone(),
        agents: trainer.agents,
        curves,
        hidden,
        mi,
        tree,
        recovery,
        record,
    })
}

/// Mean MI of `agent` with two reference sets, per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiGroupCurve {
    pub agent: usize,
    /// Former group-mates (excluding both swapped agents).
    pub old_mates: Vec<usize>,
    /// New group-mates (excluding both swapped agents).
    pub new_mates: Vec<usize>,
    pub old: Vec<f64>,
    pub new: Vec<f64>,
}

impl MiGroupCurve {
    fn mean_with(m: &MiMatrix, agent: usize, set: &[usize]) -> f64 {
        set.iter().map(|&j| m.get(agent, j)).sum::<f64>() / set.len() as f64
    }

    /// First window from `from` on where MI with the new mates exceeds MI
    /// with the old ones.
    pub fn first_flip(&self, from: usize) -> Option<usize> {
        (from..self.old.len()).find(|&t| self.new[t] > self.old[t])
    }

    /// Old mates lead in the last pre-swap window and new mates lead on
    /// average over the trailing `tail` windows.
    pub fn crossed(&self, swap_window: usize, tail: usize) -> bool {
        if swap_window == 0 || swap_window >= self.old.len() {
            return false;
        }
        let pre = swap_window - 1;
        let start = self.old.len().saturating_sub(tail).max(swap_window);
        let k = (self.old.len() - start) as f64;
        let new_tail: f64 = self.new[start..].iter().sum::<f64>() / k;
        let old_tail: f64 = self.old[start..].iter().sum::<f64>() / k;
        self.old[pre] > self.new[pre] && new_tail > old_tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub size: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { size: 500 }
    }
}

/// Trailing windows averaged when checking that the MI curves crossed.
pub const CROSSING_TAIL: usize = 10;
/// Episodes averaged on each side of the swap for the reward-recovery check.
pub const REWARD_SPAN: usize = 2_000;

pub struct SwapRun {
    pub seed: u64,
    pub cfg: HierarchyConfig,
    pub window: WindowSpec,
    pub curves: CoordinationCurves,
    pub window_matrices: Vec<MiMatrix>,
    pub timeline: PartitionTimeline,
    pub mi_curves: Vec<MiGroupCurve>,
    pub final_mi: MiMatrix,
    pub final_tree: CoalitionTree,
    pub recovery: Recovery,
    pub record: SeedRecord,
}

impl SwapRun {
    pub fn report(&self) -> Result<ExperimentReport> {
        Ok(ExperimentReport::new(
            "swap",
            vec![self.record.clone()],
            json!({ "hierarchy": self.cfg, "window": self.window }),
        )?)
    }

    pub fn swap_window(&self) -> Option<usize> {
        self.cfg.swap.map(|s| s.episode.div_ceil(self.window.size))
    }

    pub fn mi_curves_csv(&self) -> String {
        let mut out = String::from("window,episode_start");
        for c in &self.mi_curves {
            out.push_str(&format!(",agent{a}_old,agent{a}_new", a = c.agent));
        }
        out.push('\n');
        for t in 0..self.window_matrices.len() {
            out.push_str(&format!("{t},{}", t * self.window.size));
            for c in &self.mi_curves {
                out.push_str(&format!(",{:.9},{:.9}", c.old[t], c.new[t]));
            }
            out.push('\n');
        }
        out
    }
}

fn window_dataset(buffer: &[Vec<Vec<f64>>], n: usize) -> Result<HiddenStateDataset> {
    let states = (0..n)
        .map(|i| {
            Array2::from_shape_fn((buffer.len(), HIDDEN_DIM), |(s, k)| buffer[s][i][k] as f32)
        })
        .collect();
    Ok(HiddenStateDataset::new(agent_ids(n), states, SampleKind::WindowFrame)?)
}

/// Trains with optional mid-run swap, estimating one MI matrix per window of
/// training episodes from the hidden layers the agents produced while acting.
pub fn run_swap(seed: u64, cfg: &HierarchyConfig, window: WindowSpec) -> Result<SwapRun> {
    if window.size < 2 {
        return Err(SimError::Config("window size must be at least 2".into()));
    }
    let mut trainer = Trainer::new(seed, cfg)?;
    let n = cfg.n_agents();
    let mi_cfg = cfg.measurement.mi_config(seed);
    let mut curves = CoordinationCurves::default();
    let mut window_matrices = Vec::new();
    let mut buffer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(window.size);
    for _ in 0..cfg.episodes {
        let ep = trainer.step(true)?;
        curves.push(&ep.record);
        buffer.push(ep.hidden.unwrap());
        if buffer.len() == window.size {
            window_matrices.push(estimate_mi_matrix(&window_dataset(&buffer, n)?, &mi_cfg)?);
            buffer.clear();
        }
    }
    if window_matrices.is_empty() {
        return Err(SimError::Config(format!(
            "{} episodes do not fill one {}-episode window",
            cfg.episodes, window.size
        )));
    }
    let timeline = track_partitions(&window_matrices)?;

    let mi_curves: Vec<MiGroupCurve> = match cfg.swap {
        Some(swap) => {
            let (a, b) = swap.agents;
            let before = cfg.initial_assignment();
            let after = cfg.final_assignment();
            [a, b]
                .into_iter()
                .map(|agent| {
                    let mates = |asg: &Assignment| -> Vec<usize> {
                        asg.groups[asg.group_of(agent)].iter().copied().filter(|&j| j != a && j != b).collect()
                    };
                    let (old_mates, new_mates) = (mates(&before), mates(&after));
                    let old = window_matrices.iter().map(|m| MiGroupCurve::mean_with(m, agent, &old_mates)).collect();
                    let new = window_matrices.iter().map(|m| MiGroupCurve::mean_with(m, agent, &new_mates)).collect();
                    MiGroupCurve { agent, old_mates, new_mates, old, new }
                })
                .collect()
        }
        None => Vec::new(),
    };

    let final_hidden = trainer.measure(seed)?;
    let final_mi = estimate_mi_matrix(&final_hidden, &mi_cfg)?;
    let final_tree = recursive_decompose(&final_mi, &cfg.decomposition, None)?;
    let recovery = Recovery::evaluate(&final_tree, &trainer.assignment())?;

    let mut run = SwapRun {
        seed,
        cfg: cfg.clone(),
        window,
        curves,
        window_matrices,
        timeline,
        mi_curves,
        final_mi,
        final_tree,
        recovery,
        record: SeedRecord::new(seed),
    };
    run.record = swap_record(&run);
    Ok(run)
}

fn swap_record(run: &SwapRun) -> SeedRecord {
    let mut record = SeedRecord::new(run.seed);
    tree_metrics(&mut record, &run.final_mi, &run.final_tree, &run.recovery);
    record
        .metric("change_points", run.timeline.change_points.len() as f64)
        .detail("change_point_windows", json!(run.timeline.change_points))
        .detail(
            "window_partitions",
            json!(run.timeline.entries.iter().map(|e: &TimelineEntry| e.spectral.partition.to_string()).collect::<Vec<_>>()),
        );
    if let (Some(swap), Some(sw)) = (run.cfg.swap, run.swap_window()) {
        for c in &run.mi_curves {
            let a = c.agent;
            record
                .metric(&format!("agent{a}_crossed"), f64::from(u8::from(c.crossed(sw, CROSSING_TAIL))))
                .detail(&format!("agent{a}_first_flip_window"), json!(c.first_flip(sw)));
        }
        let len = run.curves.len();
        let pre = run.curves.window_mean(swap.episode.saturating_sub(REWARD_SPAN), swap.episode);
        let post = run.curves.window_mean(len.saturating_sub(REWARD_SPAN), len);
        if let (Some((_, _, pre)), Some((_, _, post))) = (pre, post) {
            record
                .metric("pre_swap_reward", pre)
                .metric("final_reward", post)
                .metric("reward_rel_change", (post - pre) / pre);
        }
        record.metric("recovers_new_structure", f64::from(u8::from(run.recovery.full())));
    }
    record
}
