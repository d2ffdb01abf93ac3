//! Two-layer ReLU policy network with hand-written backprop and Adam.
//!
//! Parameters live in one flat vector laid out as `[w1, b1, w2, b2]`, with
//! `w1` of shape `hidden x input` and `w2` of shape `actions x hidden`, both
//! row-major. The flat layout keeps the optimizer and the finite-difference
//! checks trivial.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const HIDDEN_DIM: usize = 32;
pub const N_ACTIONS: usize = 4;
pub const DEFAULT_LR: f64 = 3e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(DEFAULT_LR)
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. The gradient is checked for finiteness before any
    /// state is touched, so a rejected step leaves parameters and moments intact.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        debug_assert_eq!(params.len(), grad.len());
        if let Some((index, &value)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(SimError::NonFiniteGradient { index, value, step: self.step + 1 });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Feedforward network `input -> hidden (ReLU) -> actions`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    hidden_dim: usize,
    n_actions: usize,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input_dim: usize, hidden_dim: usize, n_actions: usize) -> Self {
        let n = hidden_dim * input_dim + hidden_dim + n_actions * hidden_dim + n_actions;
        Self { input_dim, hidden_dim, n_actions, params: vec![0.0; n] }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` init for weights and biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input_dim, hidden_dim, n_actions);
        let (_, _, w2, _) = net.offsets();
        let k1 = 1.0 / (input_dim as f64).sqrt();
        let k2 = 1.0 / (hidden_dim as f64).sqrt();
        for (i, p) in net.params.iter_mut().enumerate() {
            let k = if i < w2 { k1 } else { k2 };
            *p = rng.random_range(-k..k);
        }
        net
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = self.hidden_dim * self.input_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.n_actions * self.hidden_dim;
        (w1, b1, w2, b2)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(SimError::InputDim { expected: self.input_dim, got: input.len() });
        }
        Ok(())
    }

    /// Post-ReLU hidden layer.
    pub fn hidden(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let (_, b1, _, _) = self.offsets();
        let p = &self.params;
        let d = self.input_dim;
        let h = (0..self.hidden_dim)
            .map(|j| {
                let row = &p[j * d..(j + 1) * d];
                let z = p[b1 + j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        Ok(h)
    }

    fn logits_from_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        let (_, _, w2, b2) = self.offsets();
        let p = &self.params;
        let hd = self.hidden_dim;
        (0..self.n_actions)
            .map(|k| {
                let row = &p[w2 + k * hd..w2 + (k + 1) * hd];
                p[b2 + k] + row.iter().zip(hidden).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        let h = self.hidden(input)?;
        Ok(self.logits_from_hidden(&h))
    }

    pub fn trace(&self, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
        let hidden = self.hidden(input)?;
        let logits = self.logits_from_hidden(&hidden);
        let probs = softmax(&logits);
        Ok((logits, Trace { input: input.to_vec(), hidden, probs }))
    }

    pub fn greedy(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(input)?))
    }

    /// Gradient of a scalar loss with respect to all parameters, given the
    /// loss gradient on the logits.
    pub fn backward(&self, trace: &Trace, dlogits: &[f64], grad: &mut [f64]) {
        let (_, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let (d, hd) = (self.input_dim, self.hidden_dim);
        let mut dh = vec![0.0; hd];
        for (k, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b2 + k] += g;
            let base = w2 + k * hd;
            for j in 0..hd {
                grad[base + j] += g * trace.hidden[j];
                dh[j] += g * p[base + j];
            }
        }
        for j in 0..hd {
            // ReLU gate: the subgradient at exactly zero is taken as 0.
            if trace.hidden[j] <= 0.0 || dh[j] == 0.0 {
                continue;
            }
            grad[b1 + j] += dh[j];
            let row = &mut grad[j * d..(j + 1) * d];
            for (g, &x) in row.iter_mut().zip(&trace.input) {
                *g += dh[j] * x;
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Gradient on the logits of `-advantage * log pi(action)`.
pub fn reinforce_dlogits(probs: &[f64], action: usize, advantage: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| -advantage * (if k == action { 1.0 } else { 0.0 } - p))
        .collect()
}

/// Gradient on the logits of `-log softmax(logits)[target]`.
pub fn cross_entropy_dlogits(probs: &[f64], target: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| p - if k == target { 1.0 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub hidden: Option<Vec<f64>>,
    pub trace: Trace,
}

/// One decision taken during an episode, kept for the policy-gradient step.
#[derive(Debug, Clone)]
pub struct Step {
    pub trace: Trace,
    pub action: usize,
}

impl PolicyOutput {
    pub fn step(&self) -> Step {
        Step { trace: self.trace.clone(), action: self.action }
    }
}

/// Policy network, Adam state and the agent's private action-sampling stream.
#[derive(Debug, Clone)]
pub struct PolicyAgent {
    pub net: Mlp,
    pub optimizer: Adam,
    rng: ChaCha8Rng,
}

impl PolicyAgent {
    pub fn new(input_dim: usize, lr: f64, rng: ChaCha8Rng) -> Self {
        let mut rng = rng;
        let net = Mlp::init(input_dim, HIDDEN_DIM, N_ACTIONS, &mut rng);
        Self::from_net(net, lr, rng)
    }

    pub fn from_net(net: Mlp, lr: f64, rng: ChaCha8Rng) -> Self {
        let optimizer = Adam::new(net.params().len(), AdamConfig::with_lr(lr));
        Self { net, optimizer, rng }
    }

    pub fn seeded(input_dim: usize, lr: f64, seed: u64) -> Self {
        Self::new(input_dim, lr, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Samples an action from the softmax policy using the agent's own stream.
    pub fn forward(&mut self, input: &[f64], capture_hidden: bool) -> Result<PolicyOutput> {
        let (logits, trace) = self.net.trace(input)?;
        let action = sample_categorical(&trace.probs, &mut self.rng);
        let log_prob = log_softmax(&logits)[action];
        let hidden = capture_hidden.then(|| trace.hidden.clone());
        Ok(PolicyOutput { logits, action, log_prob, hidden, trace })
    }

    /// REINFORCE gradient of `-sum_t (r_t - baseline) log pi(a_t)`.
    pub fn reinforce_gradient(&self, steps: &[Step], rewards: &[f64], baseline: f64) -> Vec<f64> {
        let mut grad = vec![0.0; self.net.params().len()];
        for (step, &r) in steps.iter().zip(rewards) {
            let adv = r - baseline;
            if adv == 0.0 {
                continue;
            }
            let dl = reinforce_dlogits(&step.trace.probs, step.action, adv);
            self.net.backward(&step.trace, &dl, &mut grad);
        }
        grad
    }

    /// One policy-gradient step. An episode whose every advantage is exactly
    /// zero carries no learning signal and leaves the agent untouched,
    /// optimizer moments included.
    pub fn reinforce_update(&mut self, steps: &[Step], rewards: &[f64], baseline: f64) -> Result<()> {
        if steps.len() != rewards.len() {
            return Err(SimError::Config(format!(
                "{} steps but {} rewards",
                steps.len(),
                rewards.len()
            )));
        }
        if rewards.iter().all(|&r| r - baseline == 0.0) {
            return Ok(());
        }
        let grad = self.reinforce_gradient(steps, rewards, baseline);
        self.optimizer.apply(self.net.params_mut(), &grad)
    }

    /// Mean cross-entropy gradient over a labelled batch, then one Adam step.
    pub fn supervised_update(&mut self, inputs: &[Vec<f64>], targets: &[usize]) -> Result<()> {
        let mut grad = vec![0.0; self.net.params().len()];
        let scale = 1.0 / inputs.len() as f64;
        for (x, &t) in inputs.iter().zip(targets) {
            let (_, trace) = self.net.trace(x)?;
            let dl: Vec<f64> = cross_entropy_dlogits(&trace.probs, t).iter().map(|g| g * scale).collect();
            self.net.backward(&trace, &dl, &mut grad);
        }
        self.optimizer.apply(self.net.params_mut(), &grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_uniform_policy() {
        let net = Mlp::zeros(20, HIDDEN_DIM, N_ACTIONS);
        let mut agent = PolicyAgent::from_net(net, DEFAULT_LR, ChaCha8Rng::seed_from_u64(1));
        let out = agent.forward(&[0.3; 20], true).unwrap();
        for p in &out.trace.probs {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(out.log_prob, 0.25f64.ln(), epsilon = 1e-15);
        assert_eq!(out.hidden.unwrap(), vec![0.0; HIDDEN_DIM]);
    }

    #[test]
    fn dominant_logit_is_near_certain() {
        let mut net = Mlp::zeros(20, HIDDEN_DIM, N_ACTIONS);
        let (_, _, _, b2) = net.offsets();
        net.params_mut()[b2 + 2] = 50.0;
        let mut agent = PolicyAgent::from_net(net, DEFAULT_LR, ChaCha8Rng::seed_from_u64(3));
        for _ in 0..1000 {
            let out = agent.forward(&[1.0; 20], false).unwrap();
            assert_eq!(out.action, 2);
            assert!(out.trace.probs[2] > 1.0 - 1e-15);
        }
    }

    #[test]
    fn input_dimension_is_checked() {
        let mut agent = PolicyAgent::seeded(20, DEFAULT_LR, 0);
        assert!(matches!(
            agent.forward(&[0.0; 19], false),
            Err(SimError::InputDim { expected: 20, got: 19 })
        ));
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let mut agent = PolicyAgent::seeded(20, DEFAULT_LR, 99);
            (0..200).map(|i| agent.forward(&[(i % 7) as f64 * 0.1; 20], false).unwrap().action).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_advantage_changes_nothing() {
        let mut agent = PolicyAgent::seeded(20, DEFAULT_LR, 5);
        let before = agent.net.params().to_vec();
        let out = agent.forward(&[1.0; 20], false).unwrap();
        agent.reinforce_update(&[out.step()], &[0.7], 0.7).unwrap();
        assert_eq!(agent.net.params(), &before[..]);
        assert_eq!(agent.optimizer.step_count(), 0);
    }

    #[test]
    fn update_increments_step_count() {
        let mut agent = PolicyAgent::seeded(20, DEFAULT_LR, 5);
        let out = agent.forward(&[1.0; 20], false).unwrap();
        agent.reinforce_update(&[out.step()], &[1.0], 0.2).unwrap();
        assert_eq!(agent.optimizer.step_count(), 1);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut agent = PolicyAgent::seeded(20, DEFAULT_LR, 5);
        let before = agent.net.params().to_vec();
        let out = agent.forward(&[1.0; 20], false).unwrap();
        let err = agent.reinforce_update(&[out.step()], &[f64::NAN], 0.0).unwrap_err();
        assert!(matches!(err, SimError::NonFiniteGradient { step: 1, .. }));
        assert_eq!(agent.net.params(), &before[..]);
    }

    fn loss(net: &Mlp, x: &[f64], action: usize, adv: f64) -> f64 {
        -adv * log_softmax(&net.logits(x).unwrap())[action]
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let eps = 1e-4;
        for _ in 0..20 {
            let net = Mlp::init(20, HIDDEN_DIM, N_ACTIONS, &mut rng);
            let agent = PolicyAgent::from_net(net.clone(), DEFAULT_LR, ChaCha8Rng::seed_from_u64(0));
            let x = random_input(&mut rng, 20);
            let action = rng.random_range(0..N_ACTIONS);
            let adv = rng.random_range(-2.0..2.0);
            let (_, trace) = net.trace(&x).unwrap();
            let grad = agent.reinforce_gradient(&[Step { trace, action }], &[adv], 0.0);
            let mut max_rel: f64 = 0.0;
            for i in 0..grad.len() {
                let mut plus = net.clone();
                plus.params_mut()[i] += eps;
                let mut minus = net.clone();
                minus.params_mut()[i] -= eps;
                let fd = (loss(&plus, &x, action, adv) - loss(&minus, &x, action, adv)) / (2.0 * eps);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
            assert!(max_rel < 1e-3, "max relative error {max_rel}");
        }
    }

    #[test]
    fn positive_advantage_raises_taken_action_probability() {
        let mut agent = PolicyAgent::seeded(20, DEFAULT_LR, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_input(&mut rng, 20);
        let action = 1;
        let mut last = agent.net.trace(&x).unwrap().1.probs[action];
        for _ in 0..10 {
            let (_, trace) = agent.net.trace(&x).unwrap();
            agent.reinforce_update(&[Step { trace, action }], &[1.0], 0.0).unwrap();
            let p = agent.net.trace(&x).unwrap().1.probs[action];
            assert!(p > last, "{p} <= {last}");
            last = p;
        }
    }

    #[test]
    fn supervised_training_fits_a_fixed_label() {
        let mut agent = PolicyAgent::seeded(8, 1e-2, 4);
        let inputs = vec![vec![0.5; 8]; 4];
        let targets = vec![3; 4];
        for _ in 0..200 {
            agent.supervised_update(&inputs, &targets).unwrap();
        }
        assert_eq!(agent.net.greedy(&inputs[0]).unwrap(), 3);
    }

    #[test]
    fn categorical_sampling_respects_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let probs = [0.1, 0.2, 0.3, 0.4];
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            assert!((*c as f64 / 40_000.0 - p).abs() < 0.01);
        }
    }
}
