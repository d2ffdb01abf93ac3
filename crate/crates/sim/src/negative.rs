//! Negative control: agents that agree behaviorally because each one imitates
//! the same frozen oracle, without ever interacting.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use coalition_core::metrics::group_labels;
use coalition_core::{
    adjusted_rand_index, estimate_mi_matrix, fiedler_partition, isolates_a_group, ExperimentReport,
    HiddenStateDataset, MiMatrix, SampleKind, SeedRecord, SpectralResult,
};

use crate::cluster::{kmeans, spectral_clustering};
use crate::error::{Result, SimError};
use crate::game::MeasurementConfig;
use crate::hierarchy::{agent_ids, stream_rng};
use crate::policy::{argmax, Mlp, PolicyAgent, HIDDEN_DIM, N_ACTIONS};

pub const ORACLE_INPUT_DIM: usize = 8;

mod streams {
    pub const ORACLE_BASE: u64 = 100;
    pub const AGENT_INIT_BASE: u64 = 200;
    pub const AGENT_DATA_BASE: u64 = 300;
    pub const INDEPENDENT_BASE: u64 = 400;
    pub const SHARED: u64 = 500;
    pub const AGREEMENT: u64 = 501;
    pub const CLUSTERING: u64 = 502;
}

/// Frozen linear map `R^8 -> {0..3}` by argmax, no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub weights: Vec<Vec<f64>>,
}

impl Oracle {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let weights = (0..N_ACTIONS)
            .map(|_| (0..ORACLE_INPUT_DIM).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Self { weights }
    }

    pub fn label(&self, x: &[f64]) -> usize {
        let scores: Vec<f64> = self.weights.iter().map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
        argmax(&scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeControlConfig {
    pub n_groups: usize,
    pub group_size: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub eval_size: usize,
    pub target_accuracy: f64,
    /// Shared inputs used to measure behavioral agreement.
    pub agreement_inputs: usize,
    pub kmeans_restarts: usize,
    pub measurement: MeasurementConfig,
}

impl Default for NegativeControlConfig {
    fn default() -> Self {
        Self {
            n_groups: 3,
            group_size: 4,
            lr: 1e-3,
            batch: 64,
            max_steps: 3000,
            eval_every: 100,
            eval_size: 1000,
            target_accuracy: 0.98,
            agreement_inputs: 1000,
            kmeans_restarts: 10,
            measurement: MeasurementConfig::default(),
        }
    }
}

impl NegativeControlConfig {
    pub fn n_agents(&self) -> usize {
        self.n_groups * self.group_size
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        (0..self.n_groups)
            .map(|g| (g * self.group_size..(g + 1) * self.group_size).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups < 2 || self.group_size < 1 {
            return Err(SimError::Config("need at least two non-empty groups".into()));
        }
        if self.batch == 0 || self.eval_every == 0 || self.eval_size == 0 || self.agreement_inputs == 0 {
            return Err(SimError::Config("batch and evaluation sizes must be positive".into()));
        }
        if self.measurement.batch < 2 {
            return Err(SimError::Config("measurement batch must be at least 2".into()));
        }
        Ok(())
    }
}

pub fn standard_normal_inputs(rng: &mut ChaCha8Rng, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..ORACLE_INPUT_DIM).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Fraction of inputs on which the network's greedy action equals the oracle's label.
pub fn oracle_accuracy(net: &Mlp, oracle: &Oracle, inputs: &[Vec<f64>]) -> Result<f64> {
    let mut hits = 0;
    for x in inputs {
        if net.greedy(x)? == oracle.label(x) {
            hits += 1;
        }
    }
    Ok(hits as f64 / inputs.len() as f64)
}

/// Cross-entropy imitation of an oracle, stopping early once held-out accuracy
/// reaches the target. Returns the steps taken and the last measured accuracy.
pub fn train_imitator(
    agent: &mut PolicyAgent,
    oracle: &Oracle,
    cfg: &NegativeControlConfig,
    data_rng: &mut ChaCha8Rng,
) -> Result<(usize, f64)> {
    let eval = standard_normal_inputs(data_rng, cfg.eval_size);
    let mut acc = oracle_accuracy(&agent.net, oracle, &eval)?;
    for step in 1..=cfg.max_steps {
        let xs = standard_normal_inputs(data_rng, cfg.batch);
        let ys: Vec<usize> = xs.iter().map(|x| oracle.label(x)).collect();
        agent.supervised_update(&xs, &ys)?;
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            acc = oracle_accuracy(&agent.net, oracle, &eval)?;
            if acc >= cfg.target_accuracy {
                return Ok((step, acc));
            }
        }
    }
    Ok((cfg.max_steps, acc))
}

/// Pairwise rate at which greedy actions coincide over a shared input batch.
pub fn behavioral_agreement(agents: &[&Mlp], inputs: &[Vec<f64>]) -> Result<Array2<f64>> {
    if inputs.is_empty() {
        return Err(SimError::Config("behavioral agreement needs at least one input".into()));
    }
    let actions = agents
        .iter()
        .map(|net| inputs.iter().map(|x| net.greedy(x)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    agreement_from_actions(&actions)
}

/// Pairwise match rate of equally long action sequences.
pub fn agreement_from_actions(actions: &[Vec<usize>]) -> Result<Array2<f64>> {
    let len = actions.first().map_or(0, Vec::len);
    if len == 0 || actions.iter().any(|a| a.len() != len) {
        return Err(SimError::Config("action sequences must be non-empty and equally long".into()));
    }
    let n = actions.len();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let same = actions[i].iter().zip(&actions[j]).filter(|(a, b)| a == b).count();
        same as f64 / len as f64
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub kmeans_labels: Vec<usize>,
    pub spectral_labels: Vec<usize>,
    pub kmeans_ari: f64,
    pub spectral_ari: f64,
}

fn validate_agreement(a: &Array2<f64>) -> Result<()> {
    let n = a.nrows();
    if n != a.ncols() || n < 2 {
        return Err(SimError::Config(format!("agreement matrix must be square with n >= 2, got {:?}", a.shape())));
    }
    for ((i, j), &v) in a.indexed_iter() {
        if !(0.0..=1.0).contains(&v) || (v - a[[j, i]]).abs() > 1e-12 {
            return Err(SimError::Config(format!("agreement entry ({i},{j}) = {v} is not a symmetric rate")));
        }
    }
    Ok(())
}

/// k-means on the rows of the agreement matrix and normalized spectral
/// clustering of it, each scored by ARI against the planted labels.
pub fn behavioral_baselines(
    agreement: &Array2<f64>,
    k: usize,
    planted: &[usize],
    restarts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BaselineResult> {
    validate_agreement(agreement)?;
    let km = kmeans(agreement, k, restarts, rng)?;
    let sc = spectral_clustering(agreement, k, restarts, rng)?;
    Ok(BaselineResult {
        kmeans_ari: adjusted_rand_index(&km.labels, planted)?,
        spectral_ari: adjusted_rand_index(&sc.labels, planted)?,
        kmeans_labels: km.labels,
        spectral_labels: sc.labels,
    })
}

/// Hidden layers of every agent; `inputs[i]` is the batch shown to agent `i`.
fn hidden_dataset(agents: &[PolicyAgent], inputs: &[Vec<Vec<f64>>]) -> Result<HiddenStateDataset> {
    let states = agents
        .iter()
        .zip(inputs)
        .map(|(agent, xs)| {
            let mut m = Array2::<f32>::zeros((xs.len(), HIDDEN_DIM));
            for (s, x) in xs.iter().enumerate() {
                for (k, v) in agent.net.hidden(x)?.into_iter().enumerate() {
                    m[[s, k]] = v as f32;
                }
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HiddenStateDataset::new(agent_ids(agents.len()), states, SampleKind::Episode)?)
}

pub struct NegativeControlRun {
    pub seed: u64,
    pub cfg: NegativeControlConfig,
    pub oracles: Vec<Oracle>,
    pub agents: Vec<PolicyAgent>,
    pub train_steps: Vec<usize>,
    pub train_accuracy: Vec<f64>,
    pub agreement: Array2<f64>,
    pub within_agreement: f64,
    pub across_agreement: f64,
    pub mi_independent: MiMatrix,
    pub mi_shared: MiMatrix,
    pub spectral_independent: SpectralResult,
    pub spectral_shared: SpectralResult,
    pub isolates_group_independent: bool,
    pub isolates_group_shared: bool,
    pub baselines: BaselineResult,
    pub neural_spectral_ari: f64,
    pub record: SeedRecord,
}

impl NegativeControlRun {
    pub fn report(&self) -> Result<ExperimentReport> {
        Ok(ExperimentReport::new(
            "negative-control",
            vec![self.record.clone()],
            serde_json::to_value(self.cfg).unwrap(),
        )?)
    }
}

fn mean_blocks(a: &Array2<f64>, labels: &[usize]) -> (f64, f64) {
    let (mut w, mut nw, mut x, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if labels[i] == labels[j] {
                w += a[[i, j]];
                nw += 1;
            } else {
                x += a[[i, j]];
                nx += 1;
            }
        }
    }
    (w / nw.max(1) as f64, x / nx.max(1) as f64)
}

pub fn run_negative_control(seed: u64) -> Result<NegativeControlRun> {
    run_negative_control_with(seed, &NegativeControlConfig::default())
}

pub fn run_negative_control_with(seed: u64, cfg: &NegativeControlConfig) -> Result<NegativeControlRun> {
    cfg.validate()?;
    let n = cfg.n_agents();
    let groups = cfg.groups();
    let planted = group_labels(&groups, n);
    let oracles: Vec<Oracle> = (0..cfg.n_groups)
        .map(|g| Oracle::random(&mut stream_rng(seed, streams::ORACLE_BASE + g as u64)))
        .collect();

    let trained = (0..n)
        .map(|i| {
            let mut agent =
                PolicyAgent::new(ORACLE_INPUT_DIM, cfg.lr, stream_rng(seed, streams::AGENT_INIT_BASE + i as u64));
            let mut data = stream_rng(seed, streams::AGENT_DATA_BASE + i as u64);
            let (steps, acc) = train_imitator(&mut agent, &oracles[planted[i]], cfg, &mut data)?;
            Ok((agent, steps, acc))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut agents = Vec::with_capacity(n);
    let mut train_steps = Vec::with_capacity(n);
    let mut train_accuracy = Vec::with_capacity(n);
    for (a, s, acc) in trained {
        agents.push(a);
        train_steps.push(s);
        train_accuracy.push(acc);
    }

    let shared_eval = standard_normal_inputs(&mut stream_rng(seed, streams::AGREEMENT), cfg.agreement_inputs);
    let nets: Vec<&Mlp> = agents.iter().map(|a| &a.net).collect();
    let agreement = behavioral_agreement(&nets, &shared_eval)?;
    let (within_agreement, across_agreement) = mean_blocks(&agreement, &planted);

    let batch = cfg.measurement.batch;
    let independent: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| standard_normal_inputs(&mut stream_rng(seed, streams::INDEPENDENT_BASE + i as u64), batch))
        .collect();
    let shared_batch = standard_normal_inputs(&mut stream_rng(seed, streams::SHARED), batch);
    let shared = vec![shared_batch; n];
    let mi_cfg = cfg.measurement.mi_config(seed);
    let mi_independent = estimate_mi_matrix(&hidden_dataset(&agents, &independent)?, &mi_cfg)?;
    let mi_shared = estimate_mi_matrix(&hidden_dataset(&agents, &shared)?, &mi_cfg)?;
    let spectral_independent = fiedler_partition(&mi_independent)?;
    let spectral_shared = fiedler_partition(&mi_shared)?;
    let isolates_group_independent = isolates_a_group(&spectral_independent.partition, &groups)?;
    let isolates_group_shared = isolates_a_group(&spectral_shared.partition, &groups)?;

    let mut rng = stream_rng(seed, streams::CLUSTERING);
    let baselines = behavioral_baselines(&agreement, cfg.n_groups, &planted, cfg.kmeans_restarts, &mut rng)?;
    let neural = spectral_clustering(mi_independent.values(), cfg.n_groups, cfg.kmeans_restarts, &mut rng)?;
    let neural_spectral_ari = adjusted_rand_index(&neural.labels, &planted)?;

    let mut record = SeedRecord::new(seed);
    record
        .metric("within_group_agreement", within_agreement)
        .metric("across_group_agreement", across_agreement)
        .metric("mean_train_accuracy", train_accuracy.iter().sum::<f64>() / n as f64)
        .metric("isolates_group_independent", f64::from(u8::from(isolates_group_independent)))
        .metric("isolates_group_shared", f64::from(u8::from(isolates_group_shared)))
        .metric("kmeans_ari", baselines.kmeans_ari)
        .metric("spectral_ari", baselines.spectral_ari)
        .metric("neural_spectral_ari", neural_spectral_ari)
        .detail("train_steps", json!(train_steps))
        .detail("independent", json!(spectral_independent.to_flat_record("")))
        .detail("shared", json!(spectral_shared.to_flat_record("")));
    if let Some(r) = spectral_independent.ratio_r.filter(|r| r.is_finite()) {
        record.metric("r_independent", r);
    }
    if let Some(r) = spectral_shared.ratio_r.filter(|r| r.is_finite()) {
        record.metric("r_shared", r);
    }

    Ok(NegativeControlRun {
        seed,
        cfg: *cfg,
        oracles,
        agents,
        train_steps,
        train_accuracy,
        agreement,
        within_agreement,
        across_agreement,
        mi_independent,
        mi_shared,
        spectral_independent,
        spectral_shared,
        isolates_group_independent,
        isolates_group_shared,
        baselines,
        neural_spectral_ari,
        record,
    })
}
