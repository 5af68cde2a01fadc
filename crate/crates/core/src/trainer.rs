//! The training loop: sample K rollouts per task, shape rewards with
//! self-consistency sampling, compute advantages, and ascend the policy
//! gradient.
//!
//! Determinism contract: every rollout draws from a substream keyed by
//! (step, task index, rollout index) and every resample from a further child
//! keyed by the resample index, results are reduced in fixed index order, and
//! the optimizer update is single-threaded. Two runs with the same configs
//! and master seed produce bit-identical metrics regardless of worker count.

use crate::config::{EnvConfig, OptimizerKind, PolicyConfig, RunConfig, TrainerConfig};
use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorConfig, Rollout, RolloutGroup};
use crate::oracles;
use crate::policy::{Policy, PolicyGrad, PolicySnapshot};
use crate::rewards::{self, RewardConfig};
use crate::rng::{scopes, RngStream};
use crate::sampler::{self, SamplerConfig};
use crate::tree_env::{enumerate_trajectories, generate_tree, TreeTask};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Ordered task collection plus the parameters it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub env: EnvConfig,
    pub tasks: Vec<TreeTask>,
}

impl TaskSet {
    /// Seeded task generation. Each task gets its own tree and an
    /// observation with one block of `branching` coordinates per decision
    /// node: nodes on the faithful path carry a signal_scale spike at their
    /// faithful action, every coordinate carries Gaussian clutter. A policy
    /// that reads its node's block reproduces the faithful trajectory;
    /// off-path nodes have nothing to read and stay guessy.
    pub fn generate(env: &EnvConfig, master_seed: u64) -> Result<Self> {
        env.validate()?;
        let root = RngStream::from_seed(master_seed);
        let d = env.obs_dim();
        let mut tasks = Vec::with_capacity(env.n_tasks);
        for i in 0..env.n_tasks {
            use rand::Rng;
            use rand_distr::Distribution;
            let tree_seed = root.descend(&[scopes::TREE_GEN, i as u64]).seed_u64();
            let tree = generate_tree(tree_seed, env.depth, env.branching, env.n_options)?;
            let mut rng = root.descend(&[scopes::TASK_OBS, i as u64]).rng();
            let mut observation: Vec<f64> = (0..d)
                .map(|_| {
                    let noise: f64 = rand_distr::StandardNormal.sample(&mut rng);
                    env.obs_clutter * noise
                })
                .collect();
            for level in 0..env.depth {
                let spiked = rng.random::<f64>() < env.evidence_density;
                if spiked {
                    let node = tree.node_at(&tree.faithful_path[..level]);
                    observation[node * env.branching + tree.faithful_path[level]] +=
                        env.signal_scale;
                }
            }
            tasks.push(TreeTask::new(tree, observation, format!("task-{i:03}"))?);
        }
        Ok(Self { env: env.clone(), tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Per-step training metrics; one JSONL line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Mean composed reward (before any KL shaping) over the step's rollouts.
    pub mean_total: f64,
    /// Mean raw accuracy (fraction of rollouts ending at the correct option).
    pub mean_r_acc: f64,
    /// Mean raw format reward (always 1 on trees; kept for accounting).
    pub mean_r_for: f64,
    /// Mean weighted consistency bonus.
    pub mean_r_con: f64,
    /// Exact P(unfaithful | correct option) averaged over all tasks,
    /// evaluated on the post-update policy.
    pub unfaithful_mass: f64,
    /// Exact trajectory-distribution entropy averaged over all tasks,
    /// evaluated on the post-update policy.
    pub policy_entropy: f64,
    pub grad_norm: f64,
}

/// Exact posterior probability that a correct answer came through a
/// non-faithful path: P(tau-, y+) / P(y+), by full enumeration.
pub fn unfaithful_mass(policy: &Policy, task: &TreeTask, cap: u64) -> Result<f64> {
    let tree = &task.tree;
    let mut correct_mass = 0.0;
    let mut unfaithful_correct_mass = 0.0;
    for actions in enumerate_trajectories(tree, cap)? {
        if tree.option_of(&actions) != task.correct_option {
            continue;
        }
        let p = policy.log_prob_of_actions(tree, &task.observation, &actions)?.exp();
        correct_mass += p;
        if !tree.is_faithful(&actions) {
            unfaithful_correct_mass += p;
        }
    }
    Ok(unfaithful_correct_mass / correct_mass)
}

enum Optimizer {
    Sgd,
    Adam { m: PolicyGrad, v: PolicyGrad, t: u64 },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(kind: OptimizerKind, policy: &Policy) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                m: PolicyGrad::zeros_like(policy),
                v: PolicyGrad::zeros_like(policy),
                t: 0,
            },
        }
    }

    /// One ascent step along `grad`.
    fn step(&mut self, policy: &mut Policy, grad: &PolicyGrad, lr: f64) {
        match self {
            Optimizer::Sgd => {
                let mut delta = grad.clone();
                delta.scale(lr);
                policy.apply_delta(&delta);
            }
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(*t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(*t as i32);
                let mut delta = PolicyGrad::zeros_like(policy);
                let update = |mi: &mut f64, vi: &mut f64, gi: f64| -> f64 {
                    *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                    *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                    lr * (*mi / bc1) / ((*vi / bc2).sqrt() + ADAM_EPS)
                };
                for ((mi, vi), (gi, di)) in m
                    .bias
                    .iter_mut()
                    .zip(v.bias.iter_mut())
                    .zip(grad.bias.iter().zip(delta.bias.iter_mut()))
                {
                    *di = update(mi, vi, *gi);
                }
                for ((mi, vi), (gi, di)) in m
                    .weights
                    .iter_mut()
                    .zip(v.weights.iter_mut())
                    .zip(grad.weights.iter().zip(delta.weights.iter_mut()))
                {
                    *di = update(mi, vi, *gi);
                }
                policy.apply_delta(&delta);
            }
        }
    }
}

struct RolloutOutput {
    rollout: Rollout,
    raw_acc: f64,
    raw_for: f64,
    grad: PolicyGrad,
}

/// Bundles the validated configuration pieces for a run.
pub struct TrainSetup<'a> {
    pub trainer: &'a TrainerConfig,
    pub sampler: &'a SamplerConfig,
    pub rewards: &'a RewardConfig,
    pub estimator: &'a EstimatorConfig,
}

/// Runs the full loop, invoking `on_step` after each update with the
/// post-update policy and that step's metrics.
pub fn train_with_observer(
    task_set: &TaskSet,
    mut policy: Policy,
    setup: &TrainSetup,
    mut on_step: impl FnMut(usize, &Policy, &StepMetrics) -> Result<()>,
) -> Result<(Policy, Vec<StepMetrics>)> {
    setup.trainer.validate()?;
    setup.sampler.validate()?;
    setup.rewards.validate()?;
    setup.estimator.validate()?;
    if task_set.is_empty() {
        return Err(Error::InvalidConfig("task set is empty".into()));
    }
    let n_tasks = task_set.len();
    let k = setup
        .trainer
        .samples_per_prompt
        .unwrap_or_else(|| setup.estimator.algorithm.default_samples_per_prompt());
    let batch_size = setup.trainer.batch_size.unwrap_or(n_tasks).min(n_tasks);
    if setup.estimator.algorithm.needs_group() && k < 2 {
        return Err(Error::InvalidConfig(format!(
            "{} needs at least 2 samples per prompt, got {k}",
            setup.estimator.algorithm.tag()
        )));
    }
    for task in &task_set.tasks {
        if task.observation.len() != policy.obs_dim() || !policy.matches_tree(&task.tree) {
            return Err(Error::InvalidConfig(format!(
                "policy shape does not match task {}",
                task.task_id
            )));
        }
    }

    let reference = policy.snapshot();
    let mut optimizer = Optimizer::new(setup.trainer.optimizer, &policy);
    let root = RngStream::from_seed(setup.trainer.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(setup.trainer.num_workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;

    let cap = task_set.env.enumeration_cap;
    let mut metrics = Vec::with_capacity(setup.trainer.total_steps);

    for step in 0..setup.trainer.total_steps {
        // Deterministic cycling minibatch.
        let task_indices: Vec<usize> =
            (0..batch_size).map(|j| (step * batch_size + j) % n_tasks).collect();

        let jobs: Vec<(usize, usize)> = task_indices
            .iter()
            .flat_map(|&ti| (0..k).map(move |r| (ti, r)))
            .collect();

        let policy_ref = &policy;
        let reference_ref = &reference;
        let outputs: Vec<Result<RolloutOutput>> = pool.install(|| {
            jobs.par_iter()
                .map(|&(task_idx, rollout_idx)| {
                    run_rollout(
                        policy_ref,
                        reference_ref,
                        &task_set.tasks[task_idx],
                        setup,
                        root,
                        step,
                        task_idx,
                        rollout_idx,
                    )
                })
                .collect()
        });
        let outputs: Vec<RolloutOutput> = outputs.into_iter().collect::<Result<_>>()?;

        let groups: Vec<RolloutGroup> = task_indices
            .iter()
            .enumerate()
            .map(|(slot, &ti)| RolloutGroup {
                task_id: task_set.tasks[ti].task_id.clone(),
                rollouts: outputs[slot * k..(slot + 1) * k]
                    .iter()
                    .map(|o| o.rollout.clone())
                    .collect(),
            })
            .collect();
        let advantages = estimators::compute_advantages(setup.estimator, &groups)?;

        let n_rollouts = outputs.len() as f64;
        let mut grad = PolicyGrad::zeros_like(&policy);
        for (slot, output) in outputs.iter().enumerate() {
            let adv = advantages[slot / k].values[slot % k];
            if adv != 0.0 {
                grad.axpy(adv / n_rollouts, &output.grad);
            }
        }
        let grad_norm = grad.l2_norm();
        optimizer.step(&mut policy, &grad, setup.trainer.learning_rate);

        let mut unfaithful = 0.0;
        let mut entropy = 0.0;
        for task in &task_set.tasks {
            unfaithful += unfaithful_mass(&policy, task, cap)?;
            entropy += oracles::exact_trajectory_entropy(&policy, task, cap)?;
        }

        let step_metrics = StepMetrics {
            step,
            mean_total: outputs.iter().map(|o| o.rollout.reward.total).sum::<f64>() / n_rollouts,
            mean_r_acc: outputs.iter().map(|o| o.raw_acc).sum::<f64>() / n_rollouts,
            mean_r_for: outputs.iter().map(|o| o.raw_for).sum::<f64>() / n_rollouts,
            mean_r_con: outputs.iter().map(|o| o.rollout.reward.r_con).sum::<f64>() / n_rollouts,
            unfaithful_mass: unfaithful / n_tasks as f64,
            policy_entropy: entropy / n_tasks as f64,
            grad_norm,
        };
        on_step(step, &policy, &step_metrics)?;
        metrics.push(step_metrics);
    }

    Ok((policy, metrics))
}

/// `train_with_observer` without an observer.
pub fn train(
    task_set: &TaskSet,
    policy: Policy,
    setup: &TrainSetup,
) -> Result<(Policy, Vec<StepMetrics>)> {
    train_with_observer(task_set, policy, setup, |_, _, _| Ok(()))
}

/// Builds the initial policy for a run configuration: Gaussian weights plus,
/// when `evidence_gain > 0`, a diagonal evidence-reading component (each
/// node reads its own observation block: weight `gain` from coordinate
/// node*B + a to action a). This is the pretrained-competence analog: the
/// starting policy already knows how to read the evidence for genuine
/// reasoning steps, while states off every faithful path see only clutter.
pub fn init_policy(env: &EnvConfig, policy_cfg: &PolicyConfig, master_seed: u64) -> Result<Policy> {
    let mut policy = Policy::init(
        env.depth,
        env.branching,
        env.obs_dim(),
        policy_cfg.temperature,
        policy_cfg.init_std,
        RngStream::from_seed(master_seed).child(scopes::POLICY_INIT).seed_u64(),
    )?;
    if policy_cfg.evidence_gain > 0.0 {
        let b = env.branching;
        let d = env.obs_dim();
        let bias_len = policy.n_nodes() * b;
        for node in 0..policy.n_nodes() {
            for a in 0..b {
                let widx = (node * b + a) * d + (node * b + a);
                policy.nudge_param(bias_len + widx, policy_cfg.evidence_gain);
            }
        }
    }
    Ok(policy)
}

/// Convenience entry point from a full run configuration.
pub fn run_training(
    config: &RunConfig,
    mut on_step: impl FnMut(usize, &Policy, &StepMetrics) -> Result<()>,
) -> Result<(Policy, Vec<StepMetrics>)> {
    let task_set = TaskSet::generate(&config.env, config.trainer.seed)?;
    let policy = init_policy(&config.env, &config.policy, config.trainer.seed)?;
    let setup = TrainSetup {
        trainer: &config.trainer,
        sampler: &config.sampler,
        rewards: &config.rewards,
        estimator: &config.estimator,
    };
    train_with_observer(&task_set, policy, &setup, |s, p, m| on_step(s, p, m))
}

#[allow(clippy::too_many_arguments)]
fn run_rollout(
    policy: &Policy,
    reference: &PolicySnapshot,
    task: &TreeTask,
    setup: &TrainSetup,
    root: RngStream,
    step: usize,
    task_idx: usize,
    rollout_idx: usize,
) -> Result<RolloutOutput> {
    let mut rng = root
        .descend(&[scopes::ROLLOUT, step as u64, task_idx as u64, rollout_idx as u64])
        .rng();
    let trajectory = policy.sample_trajectory(task, &mut rng)?;

    let answer_set = if setup.trainer.scs_enabled {
        let stream =
            root.descend(&[scopes::RESAMPLE, step as u64, task_idx as u64, rollout_idx as u64]);
        Some(sampler::collect_answers(policy, task, &trajectory, setup.sampler, &stream)?)
    } else {
        None
    };
    let reward = rewards::compose(task, &trajectory, answer_set.as_ref(), setup.rewards)?;
    let kl_penalties = if setup.estimator.kl_coef > 0.0 {
        estimators::kl_penalty_k3(policy, reference, task, &trajectory)?
    } else {
        Vec::new()
    };
    let raw_acc = rewards::verify(task, &trajectory)?;
    let raw_for = rewards::format_reward(&trajectory);
    let grad = policy.log_prob_gradient(task, &trajectory)?;
    Ok(RolloutOutput { rollout: Rollout { trajectory, reward, kl_penalties }, raw_acc, raw_for, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Algorithm;
    use crate::tree_env::{generate_tree, Trajectory};

    fn small_config(steps: usize, seed: u64) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.env.n_tasks = 4;
        cfg.env.depth = 2;
        cfg.env.branching = 3;
        cfg.env.n_options = 3;
        cfg.trainer.total_steps = steps;
        cfg.trainer.seed = seed;
        cfg.trainer.samples_per_prompt = Some(4);
        cfg.resolve();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn task_generation_is_pure_and_carries_signal() {
        let env = EnvConfig { n_tasks: 6, ..Default::default() };
        let a = TaskSet::generate(&env, 5).unwrap();
        let b = TaskSet::generate(&env, 5).unwrap();
        assert_eq!(a, b);
        let c = TaskSet::generate(&env, 6).unwrap();
        assert_ne!(a, c);

        for task in &a.tasks {
            assert_eq!(task.observation.len(), env.obs_dim());
            // Faithful-path blocks carry the signal spike on top of clutter.
            for (level, &action) in task.tree.faithful_path.iter().enumerate() {
                let node = task.tree.node_at(&task.tree.faithful_path[..level]);
                let coord = node * env.branching + action;
                assert!(task.observation[coord].is_finite());
                assert!(
                    (task.observation[coord]).abs() < env.signal_scale + 5.0 * env.obs_clutter
                );
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_policy_fixed() {
        let mut cfg = small_config(3, 1);
        cfg.trainer.learning_rate = 0.0;
        let task_set = TaskSet::generate(&cfg.env, cfg.trainer.seed).unwrap();
        let policy = init_policy(&cfg.env, &cfg.policy, cfg.trainer.seed).unwrap();
        let initial = policy.clone();
        let setup = TrainSetup {
            trainer: &cfg.trainer,
            sampler: &cfg.sampler,
            rewards: &cfg.rewards,
            estimator: &cfg.estimator,
        };
        let (final_policy, _) = train(&task_set, policy, &setup).unwrap();
        assert_eq!(final_policy, initial);
    }

    #[test]
    fn disabled_scs_contributes_no_consistency_reward() {
        let mut cfg = small_config(3, 2);
        cfg.trainer.scs_enabled = false;
        let (_, metrics) = run_training(&cfg, |_, _, _| Ok(())).unwrap();
        assert!(metrics.iter().all(|m| m.mean_r_con == 0.0));
    }

    #[test]
    fn reward_accounting_holds_each_step() {
        let cfg = small_config(5, 3);
        let (_, metrics) = run_training(&cfg, |_, _, _| Ok(())).unwrap();
        for m in &metrics {
            let lhs = m.mean_total;
            let rhs = cfg.rewards.accuracy_weight * m.mean_r_acc
                + cfg.rewards.format_weight * m.mean_r_for
                + m.mean_r_con;
            assert!((lhs - rhs).abs() < 1e-10, "step {}: {lhs} vs {rhs}", m.step);
        }
    }

    #[test]
    fn single_positive_advantage_step_raises_action_probability() {
        // One hand-built REINFORCE step on a depth-1 task.
        let tree = generate_tree(7, 1, 4, 4).unwrap();
        let task = TreeTask::new(tree, vec![0.2; 4], "t".into()).unwrap();
        let mut policy = Policy::seeded_random(&task.tree, 4, 0.3, 1);
        let correct_action = task
            .tree
            .leaf_option_map
            .iter()
            .position(|&o| o == task.correct_option)
            .unwrap();
        let before = policy.action_distribution(0, &task.observation)[correct_action];
        let traj = Trajectory::complete(&task.tree, vec![correct_action], vec![0.0]);
        let grad = policy.log_prob_gradient(&task, &traj).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &policy);
        opt.step(&mut policy, &grad, 0.1);
        let after = policy.action_distribution(0, &task.observation)[correct_action];
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn metrics_are_deterministic_across_worker_counts() {
        let mut cfg = small_config(4, 9);
        cfg.trainer.num_workers = 1;
        let (_, single) = run_training(&cfg, |_, _, _| Ok(())).unwrap();
        cfg.trainer.num_workers = 4;
        let (_, multi) = run_training(&cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(single, multi);
    }

    #[test]
    fn adam_and_kl_paths_run() {
        let mut cfg = small_config(3, 10);
        cfg.trainer.optimizer = OptimizerKind::Adam;
        cfg.estimator.algorithm = Algorithm::Grpo;
        cfg.estimator.kl_coef = 1e-3;
        let (_, metrics) = run_training(&cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(metrics.len(), 3);
        assert!(metrics.iter().all(|m| m.grad_norm.is_finite()));
    }

    #[test]
    fn unfaithful_mass_examples() {
        // Saturated-faithful policy: mass vanishes.
        let tree = generate_tree(3, 2, 3, 3).unwrap();
        let task = TreeTask::new(tree, vec![0.0; 4], "sat".into()).unwrap();
        let policy = Policy::saturated_on(&task.tree, &task.tree.faithful_path.clone(), 4, 50.0);
        let uf = unfaithful_mass(&policy, &task, 4096).unwrap();
        assert!(uf < 1e-9, "{uf}");

        // Hand-built joint masses: P(y+, tau+) = 0.3, P(y+, tau-) = 0.1.
        let tree = crate::tree_env::ReasoningTree {
            depth: 1,
            branching: 3,
            n_options: 2,
            leaf_option_map: vec![0, 0, 1],
            faithful_path: vec![0],
            seed: 0,
        };
        tree.validate().unwrap();
        let task = TreeTask::new(tree, vec![], "joint".into()).unwrap();
        let mut policy = Policy::uniform(&task.tree, 0);
        for (a, p) in [(0usize, 0.3f64), (1, 0.1), (2, 0.6)] {
            policy.nudge_param(a, p.ln());
        }
        let uf = unfaithful_mass(&policy, &task, 4096).unwrap();
        assert!((uf - 0.25).abs() < 1e-12, "{uf}");

        // Uniform policy, both correct leaves under one subtree, one faithful.
        let tree = crate::tree_env::ReasoningTree {
            depth: 2,
            branching: 2,
            n_options: 2,
            leaf_option_map: vec![0, 0, 1, 1],
            faithful_path: vec![0, 0],
            seed: 0,
        };
        tree.validate().unwrap();
        let task = TreeTask::new(tree, vec![], "sym".into()).unwrap();
        let policy = Policy::uniform(&task.tree, 0);
        let uf = unfaithful_mass(&policy, &task, 4096).unwrap();
        assert!((uf - 0.5).abs() < 1e-12, "{uf}");
    }
}
