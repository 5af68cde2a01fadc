//! Observation-conditioned autoregressive softmax policy over tree actions.
//!
//! Each decision node owns a logit bias vector (length B) and a weight matrix
//! (B x d) mapping the observation to logit offsets; the action distribution
//! is softmax((bias + W·obs) / temperature). Evaluation is read-only, so
//! sampling and scoring can run concurrently; updates happen only in the
//! trainer's single-threaded phase.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tree_env::{ReasoningTree, Trajectory, TreeTask};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    depth: usize,
    branching: usize,
    obs_dim: usize,
    n_nodes: usize,
    temperature: f64,
    /// Flattened (node, action) logit biases.
    bias: Vec<f64>,
    /// Flattened (node, action, obs coordinate) weights.
    weights: Vec<f64>,
}

impl Policy {
    /// Near-uniform initialization: zero biases, Gaussian weights with the
    /// given standard deviation.
    pub fn init(
        depth: usize,
        branching: usize,
        obs_dim: usize,
        temperature: f64,
        init_std: f64,
        seed: u64,
    ) -> Result<Self> {
        if depth < 1 || branching < 2 {
            return Err(Error::InvalidConfig("policy needs depth >= 1, branching >= 2".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        let n_nodes = (branching as u64)
            .checked_pow(depth as u32)
            .map(|l| ((l - 1) / (branching as u64 - 1)) as usize)
            .filter(|&n| n * branching * obs_dim.max(1) <= 1 << 28)
            .ok_or_else(|| Error::InvalidConfig("policy parameter tensor too large".into()))?;
        let mut rng = RngStream::from_seed(seed).rng();
        let weights = (0..n_nodes * branching * obs_dim)
            .map(|_| init_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        Ok(Self {
            depth,
            branching,
            obs_dim,
            n_nodes,
            temperature,
            bias: vec![0.0; n_nodes * branching],
            weights,
        })
    }

    /// Exactly uniform policy (all parameters zero).
    pub fn uniform(tree: &ReasoningTree, obs_dim: usize) -> Self {
        let mut p = Self::init(tree.depth, tree.branching, obs_dim, 1.0, 0.0, 0).unwrap();
        p.weights.iter_mut().for_each(|w| *w = 0.0);
        p
    }

    /// Policy with biases saturated toward `path` at every node along it.
    /// With zero weights the preferred branch is numerically deterministic
    /// once `margin` exceeds ~45 (the off-branch mass underflows f64).
    pub fn saturated_on(tree: &ReasoningTree, path: &[usize], obs_dim: usize, margin: f64) -> Self {
        let mut p = Self::uniform(tree, obs_dim);
        for t in 0..path.len() {
            let node = tree.node_at(&path[..t]);
            p.bias[node * p.branching + path[t]] = margin;
        }
        p
    }

    /// Gaussian-random biases and weights, for oracle sweeps.
    pub fn seeded_random(tree: &ReasoningTree, obs_dim: usize, scale: f64, seed: u64) -> Self {
        let mut p = Self::init(tree.depth, tree.branching, obs_dim, 1.0, 0.0, seed).unwrap();
        let mut rng = RngStream::from_seed(seed).child(1).rng();
        for b in p.bias.iter_mut() {
            *b = scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
        for w in p.weights.iter_mut() {
            *w = scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
        p
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn matches_tree(&self, tree: &ReasoningTree) -> bool {
        self.depth == tree.depth && self.branching == tree.branching
    }

    fn check_task(&self, task: &TreeTask) -> Result<()> {
        if !self.matches_tree(&task.tree) {
            return Err(Error::InvalidConfig(format!(
                "policy shape (depth {}, branching {}) does not match tree (depth {}, branching {})",
                self.depth, self.branching, task.tree.depth, task.tree.branching
            )));
        }
        if task.observation.len() != self.obs_dim {
            return Err(Error::InvalidConfig(format!(
                "observation dim {} does not match policy dim {}",
                task.observation.len(),
                self.obs_dim
            )));
        }
        Ok(())
    }

    fn logits(&self, node: usize, obs: &[f64]) -> Vec<f64> {
        let b = self.branching;
        let d = self.obs_dim;
        (0..b)
            .map(|a| {
                let row = &self.weights[(node * b + a) * d..(node * b + a + 1) * d];
                let dot: f64 = row.iter().zip(obs).map(|(w, x)| w * x).sum();
                (self.bias[node * b + a] + dot) / self.temperature
            })
            .collect()
    }

    /// Log-softmax over actions at a node.
    pub fn log_action_distribution(&self, node: usize, obs: &[f64]) -> Vec<f64> {
        let z = self.logits(node, obs);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        z.into_iter().map(|v| v - log_sum).collect()
    }

    pub fn action_distribution(&self, node: usize, obs: &[f64]) -> Vec<f64> {
        self.log_action_distribution(node, obs).into_iter().map(f64::exp).collect()
    }

    /// Samples one complete trajectory for `task`.
    pub fn sample_trajectory(&self, task: &TreeTask, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        self.check_task(task)?;
        self.continue_on(&task.tree, &task.observation, &[], rng)
    }

    /// Resumes sampling from a kept prefix; the result starts with exactly
    /// `prefix` (scored under this policy) and fresh samples after it.
    pub fn continue_from_prefix(
        &self,
        task: &TreeTask,
        prefix: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Trajectory> {
        self.check_task(task)?;
        self.continue_on(&task.tree, &task.observation, prefix, rng)
    }

    /// Prefix continuation against an explicit observation (used for
    /// perturbed resampling, where the conditioning differs from the task's
    /// clean observation).
    pub fn continue_on(
        &self,
        tree: &ReasoningTree,
        obs: &[f64],
        prefix: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Trajectory> {
        tree.validate_prefix(prefix)?;
        let mut actions = Vec::with_capacity(tree.depth);
        let mut logprobs = Vec::with_capacity(tree.depth);
        for t in 0..tree.depth {
            let node = tree.node_at(&actions);
            let log_dist = self.log_action_distribution(node, obs);
            let action = if t < prefix.len() {
                prefix[t]
            } else {
                sample_categorical(&log_dist, rng)
            };
            logprobs.push(log_dist[action]);
            actions.push(action);
        }
        Ok(Trajectory::complete(tree, actions, logprobs))
    }

    /// Log-probability of a complete trajectory under this policy.
    pub fn log_prob(&self, task: &TreeTask, trajectory: &Trajectory) -> Result<f64> {
        self.check_task(task)?;
        self.log_prob_of_actions(&task.tree, &task.observation, &trajectory.actions)
    }

    pub fn log_prob_of_actions(
        &self,
        tree: &ReasoningTree,
        obs: &[f64],
        actions: &[usize],
    ) -> Result<f64> {
        tree.validate_path(actions)
            .map_err(|e| Error::InvalidTrajectory(e.to_string()))?;
        let mut total = 0.0;
        for t in 0..actions.len() {
            let node = tree.node_at(&actions[..t]);
            total += self.log_action_distribution(node, obs)[actions[t]];
        }
        Ok(total)
    }

    /// Analytic gradient of log pi(trajectory | observation) with respect to
    /// all parameters. Per visited node the bias gradient is
    /// (indicator - probability) / temperature and the weight gradient scales
    /// it by the observation; unvisited nodes contribute zero blocks.
    pub fn log_prob_gradient(&self, task: &TreeTask, trajectory: &Trajectory) -> Result<PolicyGrad> {
        self.check_task(task)?;
        let tree = &task.tree;
        let obs = &task.observation;
        tree.validate_path(&trajectory.actions)
            .map_err(|e| Error::InvalidTrajectory(e.to_string()))?;
        let mut grad = PolicyGrad::zeros_like(self);
        self.accumulate_log_prob_gradient(tree, obs, &trajectory.actions, 1.0, &mut grad);
        Ok(grad)
    }

    /// Adds `scale * d log pi(actions)/d theta` into `grad` without allocating.
    pub fn accumulate_log_prob_gradient(
        &self,
        tree: &ReasoningTree,
        obs: &[f64],
        actions: &[usize],
        scale: f64,
        grad: &mut PolicyGrad,
    ) {
        let b = self.branching;
        let d = self.obs_dim;
        for t in 0..actions.len() {
            let node = tree.node_at(&actions[..t]);
            let probs = self.action_distribution(node, obs);
            for a in 0..b {
                let indicator = if a == actions[t] { 1.0 } else { 0.0 };
                let g = scale * (indicator - probs[a]) / self.temperature;
                grad.bias[node * b + a] += g;
                let row = &mut grad.weights[(node * b + a) * d..(node * b + a + 1) * d];
                for (slot, &x) in row.iter_mut().zip(obs) {
                    *slot += g * x;
                }
            }
        }
    }

    /// Frozen deep copy for reference-policy evaluation.
    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot(self.clone())
    }

    /// Applies a gradient-ascent displacement (already scaled by the caller).
    pub fn apply_delta(&mut self, delta: &PolicyGrad) {
        for (p, g) in self.bias.iter_mut().zip(&delta.bias) {
            *p += g;
        }
        for (p, g) in self.weights.iter_mut().zip(&delta.weights) {
            *p += g;
        }
    }

    /// Total number of scalar parameters (biases first, then weights).
    pub fn param_len(&self) -> usize {
        self.bias.len() + self.weights.len()
    }

    pub fn param(&self, idx: usize) -> f64 {
        if idx < self.bias.len() {
            self.bias[idx]
        } else {
            self.weights[idx - self.bias.len()]
        }
    }

    pub fn nudge_param(&mut self, idx: usize, delta: f64) {
        if idx < self.bias.len() {
            self.bias[idx] += delta;
        } else {
            self.weights[idx - self.bias.len()] += delta;
        }
    }

    pub fn to_checkpoint_json(&self) -> String {
        let doc = CheckpointDoc {
            depth: self.depth,
            branching: self.branching,
            obs_dim: self.obs_dim,
            temperature: self.temperature,
            bias: TensorDoc { shape: vec![self.n_nodes, self.branching], data: self.bias.clone() },
            weights: TensorDoc {
                shape: vec![self.n_nodes, self.branching, self.obs_dim],
                data: self.weights.clone(),
            },
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        let n_nodes = doc.bias.shape.first().copied().unwrap_or(0);
        let mut policy = Self::init(doc.depth, doc.branching, doc.obs_dim, doc.temperature, 0.0, 0)?;
        if doc.bias.shape != vec![policy.n_nodes, policy.branching]
            || doc.bias.data.len() != policy.bias.len()
            || doc.weights.shape != vec![policy.n_nodes, policy.branching, policy.obs_dim]
            || doc.weights.data.len() != policy.weights.len()
        {
            return Err(Error::InvalidConfig(format!(
                "checkpoint shape mismatch: {n_nodes} nodes in file, {} expected",
                policy.n_nodes
            )));
        }
        policy.bias = doc.bias.data;
        policy.weights = doc.weights.data;
        Ok(policy)
    }
}

fn sample_categorical(log_dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (a, lp) in log_dist.iter().enumerate() {
        cum += lp.exp();
        if u < cum {
            return a;
        }
    }
    log_dist.len() - 1
}

/// Immutable snapshot of policy parameters; evaluation never changes.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot(Policy);

impl PolicySnapshot {
    pub fn policy(&self) -> &Policy {
        &self.0
    }
}

/// Parameter-shaped gradient (same layout as `Policy`).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub bias: Vec<f64>,
    pub weights: Vec<f64>,
    branching: usize,
    obs_dim: usize,
}

impl PolicyGrad {
    pub fn zeros_like(policy: &Policy) -> Self {
        Self {
            bias: vec![0.0; policy.bias.len()],
            weights: vec![0.0; policy.weights.len()],
            branching: policy.branching,
            obs_dim: policy.obs_dim,
        }
    }

    pub fn bias_block(&self, node: usize) -> &[f64] {
        &self.bias[node * self.branching..(node + 1) * self.branching]
    }

    pub fn weight_block(&self, node: usize) -> &[f64] {
        let stride = self.branching * self.obs_dim;
        &self.weights[node * stride..(node + 1) * stride]
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &PolicyGrad) {
        for (s, o) in self.bias.iter_mut().zip(&other.bias) {
            *s += alpha * o;
        }
        for (s, o) in self.weights.iter_mut().zip(&other.weights) {
            *s += alpha * o;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.bias.iter_mut().for_each(|v| *v *= alpha);
        self.weights.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn l2_norm(&self) -> f64 {
        self.bias
            .iter()
            .chain(self.weights.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn param(&self, idx: usize) -> f64 {
        if idx < self.bias.len() {
            self.bias[idx]
        } else {
            self.weights[idx - self.bias.len()]
        }
    }

    pub fn param_len(&self) -> usize {
        self.bias.len() + self.weights.len()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    depth: usize,
    branching: usize,
    obs_dim: usize,
    temperature: f64,
    bias: TensorDoc,
    weights: TensorDoc,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tree_env::{enumerate_trajectories, generate_tree, trajectory_probability};

    fn toy_task(seed: u64, depth: usize, branching: usize, n_options: usize, d: usize) -> TreeTask {
        let tree = generate_tree(seed, depth, branching, n_options).unwrap();
        let obs: Vec<f64> = RngStream::from_seed(seed ^ 99)
            .rng()
            .sample_iter(rand::distr::StandardUniform)
            .take(d)
            .collect();
        TreeTask::new(tree, obs, format!("toy-{seed}")).unwrap()
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let task = toy_task(7, 1, 4, 4, 3);
        let policy = Policy::uniform(&task.tree, 3);
        let mut rng = RngStream::from_seed(5).rng();
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let traj = policy.sample_trajectory(&task, &mut rng).unwrap();
            counts[traj.actions[0]] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.01, "freq {freq}");
        }
    }

    #[test]
    fn saturated_policy_is_faithful_with_high_probability() {
        let task = toy_task(11, 3, 3, 4, 3);
        let policy = Policy::saturated_on(&task.tree, &task.tree.faithful_path.clone(), 3, 8.0);
        let exact =
            trajectory_probability(&task.tree, &policy, &task.observation, &task.tree.faithful_path)
                .unwrap();
        assert!(exact > 0.99);
        let mut rng = RngStream::from_seed(6).rng();
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| policy.sample_trajectory(&task, &mut rng).unwrap().is_faithful)
            .count();
        let freq = hits as f64 / n as f64;
        assert!(freq >= 0.99, "freq {freq}");
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((freq - exact).abs() <= 3.0 * se + 1e-9);
    }

    #[test]
    fn sampling_is_deterministic_given_stream() {
        let task = toy_task(3, 3, 3, 4, 5);
        let policy = Policy::seeded_random(&task.tree, 5, 0.7, 21);
        let a = policy.sample_trajectory(&task, &mut RngStream::from_seed(8).rng()).unwrap();
        let b = policy.sample_trajectory(&task, &mut RngStream::from_seed(8).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prefix_continuation_contract() {
        let task = toy_task(13, 3, 3, 4, 4);
        let policy = Policy::saturated_on(&task.tree, &task.tree.faithful_path.clone(), 4, 50.0);

        // Faithful path minus last step under a saturated policy ends faithfully.
        let prefix = &task.tree.faithful_path[..2];
        let traj = policy
            .continue_from_prefix(&task, prefix, &mut RngStream::from_seed(1).rng())
            .unwrap();
        assert_eq!(traj.terminal_option, Some(task.correct_option));
        assert!(traj.is_faithful);

        // Empty prefix matches sample_trajectory given the same stream.
        let a = policy
            .continue_from_prefix(&task, &[], &mut RngStream::from_seed(2).rng())
            .unwrap();
        let b = policy.sample_trajectory(&task, &mut RngStream::from_seed(2).rng()).unwrap();
        assert_eq!(a, b);

        // Full path as prefix: no sampling, trajectory equals the prefix.
        let full: Vec<usize> = vec![2, 0, 1];
        let traj = policy
            .continue_from_prefix(&task, &full, &mut RngStream::from_seed(3).rng())
            .unwrap();
        assert_eq!(traj.actions, full);
        assert!(traj.is_complete);

        // Invalid prefix errors.
        assert!(policy
            .continue_from_prefix(&task, &[9], &mut RngStream::from_seed(4).rng())
            .is_err());
    }

    #[test]
    fn log_prob_matches_uniform_value() {
        let task = toy_task(2, 2, 2, 2, 3);
        let policy = Policy::uniform(&task.tree, 3);
        let traj = policy.sample_trajectory(&task, &mut RngStream::from_seed(1).rng()).unwrap();
        assert!((policy.log_prob(&task, &traj).unwrap() - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn high_temperature_flattens_log_prob() {
        let task = toy_task(17, 2, 3, 3, 4);
        let mut policy = Policy::seeded_random(&task.tree, 4, 2.0, 5);
        policy.temperature = 1e9;
        let uniform_lp = (1.0 / 3.0f64).ln() * 2.0;
        for path in enumerate_trajectories(&task.tree, 4096).unwrap() {
            let traj = Trajectory::complete(&task.tree, path, vec![]);
            let lp = policy.log_prob(&task, &traj).unwrap();
            assert!((lp - uniform_lp).abs() < 1e-6, "lp {lp} vs {uniform_lp}");
        }
    }

    #[test]
    fn log_prob_agrees_with_trajectory_probability() {
        for seed in 0..100 {
            let task = toy_task(seed, 3, 2, 3, 4);
            let policy = Policy::seeded_random(&task.tree, 4, 1.2, seed ^ 0x55);
            let traj = policy
                .sample_trajectory(&task, &mut RngStream::from_seed(seed).rng())
                .unwrap();
            let p =
                trajectory_probability(&task.tree, &policy, &task.observation, &traj.actions)
                    .unwrap();
            let lp = policy.log_prob(&task, &traj).unwrap();
            assert!((lp.exp() - p).abs() < 1e-10);
            // Sampled step logprobs agree with rescoring.
            assert!((traj.log_prob() - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_log_prob_normalizes() {
        let task = toy_task(23, 3, 3, 4, 4);
        let policy = Policy::seeded_random(&task.tree, 4, 1.5, 9);
        let total: f64 = enumerate_trajectories(&task.tree, 4096)
            .unwrap()
            .into_iter()
            .map(|p| {
                policy
                    .log_prob_of_actions(&task.tree, &task.observation, &p)
                    .unwrap()
                    .exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let task = toy_task(seed, 2, 3, 3, 3);
            let policy = Policy::seeded_random(&task.tree, 3, 0.8, seed);
            let traj = policy
                .sample_trajectory(&task, &mut RngStream::from_seed(seed).rng())
                .unwrap();
            let grad = policy.log_prob_gradient(&task, &traj).unwrap();
            let h = 1e-5;
            for idx in 0..policy.param_len() {
                let mut plus = policy.clone();
                plus.nudge_param(idx, h);
                let mut minus = policy.clone();
                minus.nudge_param(idx, -h);
                let fd = (plus.log_prob(&task, &traj).unwrap()
                    - minus.log_prob(&task, &traj).unwrap())
                    / (2.0 * h);
                let a = grad.param(idx);
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((a - fd) / denom).abs() < 1e-4,
                    "seed {seed} param {idx}: analytic {a}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn unvisited_nodes_have_zero_gradient_blocks() {
        let task = toy_task(31, 2, 2, 2, 3);
        let policy = Policy::seeded_random(&task.tree, 3, 1.0, 3);
        let traj = policy
            .sample_trajectory(&task, &mut RngStream::from_seed(0).rng())
            .unwrap();
        let grad = policy.log_prob_gradient(&task, &traj).unwrap();
        let visited: Vec<usize> =
            (0..=1).map(|t| task.tree.node_at(&traj.actions[..t])).collect();
        for node in 0..policy.n_nodes() {
            let zero = grad.bias_block(node).iter().all(|&g| g == 0.0)
                && grad.weight_block(node).iter().all(|&g| g == 0.0);
            assert_eq!(zero, !visited.contains(&node), "node {node}");
        }
    }

    #[test]
    fn uniform_bias_gradient_is_one_hot_minus_quarter() {
        let task = toy_task(7, 1, 4, 4, 2);
        let policy = Policy::uniform(&task.tree, 2);
        let traj = policy.sample_trajectory(&task, &mut RngStream::from_seed(2).rng()).unwrap();
        let grad = policy.log_prob_gradient(&task, &traj).unwrap();
        for a in 0..4 {
            let expected = if a == traj.actions[0] { 0.75 } else { -0.25 };
            assert!((grad.bias[a] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_gradient_rows_sum_to_zero() {
        let task = toy_task(41, 3, 3, 4, 4);
        let policy = Policy::seeded_random(&task.tree, 4, 1.0, 11);
        let traj = policy.sample_trajectory(&task, &mut RngStream::from_seed(4).rng()).unwrap();
        let grad = policy.log_prob_gradient(&task, &traj).unwrap();
        for node in 0..policy.n_nodes() {
            let row_sum: f64 = grad.bias_block(node).iter().sum();
            assert!(row_sum.abs() < 1e-12);
        }
    }

    #[test]
    fn snapshot_is_immune_to_live_updates() {
        let task = toy_task(19, 2, 3, 3, 3);
        let mut policy = Policy::seeded_random(&task.tree, 3, 0.5, 2);
        let snapshot = policy.snapshot();
        let traj = policy.sample_trajectory(&task, &mut RngStream::from_seed(0).rng()).unwrap();
        let before = snapshot.policy().log_prob(&task, &traj).unwrap();
        let mut delta = PolicyGrad::zeros_like(&policy);
        delta.bias.iter_mut().for_each(|g| *g = 3.5);
        delta.weights.iter_mut().for_each(|g| *g = -1.25);
        policy.apply_delta(&delta);
        let after = snapshot.policy().log_prob(&task, &traj).unwrap();
        assert_eq!(before.to_bits(), after.to_bits());
        assert_ne!(policy.log_prob(&task, &traj).unwrap().to_bits(), before.to_bits());
    }

    #[test]
    fn checkpoint_round_trip() {
        let tree = generate_tree(3, 3, 3, 4).unwrap();
        let policy = Policy::seeded_random(&tree, 5, 0.9, 77);
        let text = policy.to_checkpoint_json();
        let restored = Policy::from_checkpoint_json(&text).unwrap();
        assert_eq!(policy, restored);
        assert!(Policy::from_checkpoint_json("{}").is_err());
    }
}
