//! Independent verifiers for every stochastic estimate in the system:
//! the closed-form expected distinct-option count, its Monte-Carlo
//! counterpart, and exact enumeration oracles for expected reward and the
//! policy gradient.
//!
//! The enumeration oracles run in the noise-free mode (sigma = 0), where the
//! resampling expectation has an exact form; noisy expectations are only ever
//! validated by Monte Carlo.

use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyGrad};
use crate::rewards::RewardConfig;
use crate::rng::{scopes, RngStream};
use crate::sampler::SamplerConfig;
use crate::tree_env::{enumerate_trajectories, TreeTask};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;

/// Closed-form expected number of distinct options after M independent
/// draws, where the correct option is drawn with probability p and the other
/// N-1 options uniformly share the rest:
/// E[S] = 1 - (1-p)^M + (N-1) (1 - (1 - (1-p)/(N-1))^M).
pub fn expected_distinct_options(n_options: usize, p_correct: f64, n_trials: usize) -> Result<f64> {
    if n_options < 2 {
        return Err(Error::OutOfRange(format!("n_options must be >= 2, got {n_options}")));
    }
    if n_trials < 1 {
        return Err(Error::OutOfRange(format!("n_trials must be >= 1, got {n_trials}")));
    }
    if !(0.0..=1.0).contains(&p_correct) {
        return Err(Error::OutOfRange(format!("p_correct must lie in [0, 1], got {p_correct}")));
    }
    if n_trials == 1 {
        // One draw always yields exactly one distinct option; return the
        // exact value rather than the rounded formula evaluation.
        return Ok(1.0);
    }
    let m = n_trials as i32;
    let others = (n_options - 1) as f64;
    let q = (1.0 - p_correct) / others;
    Ok(1.0 - (1.0 - p_correct).powi(m) + others * (1.0 - (1.0 - q).powi(m)))
}

/// Expected distinct count after m i.i.d. draws from an arbitrary
/// categorical distribution: sum_o 1 - (1 - q_o)^m.
pub fn expected_distinct_categorical(probs: &[f64], m: usize) -> f64 {
    probs.iter().map(|&q| 1.0 - (1.0 - q).powi(m as i32)).sum()
}

/// Simulates the categorical sampling process and returns the sample mean of
/// the distinct-option count and its standard error.
pub fn monte_carlo_distinct_options(
    n_options: usize,
    p_correct: f64,
    n_trials: usize,
    experiments: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    if n_options < 2 || n_options > 128 {
        return Err(Error::OutOfRange(format!("n_options must lie in [2, 128], got {n_options}")));
    }
    if n_trials < 1 {
        return Err(Error::OutOfRange("n_trials must be >= 1".into()));
    }
    if experiments < 1 {
        return Err(Error::OutOfRange("experiments must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p_correct) {
        return Err(Error::OutOfRange(format!("p_correct must lie in [0, 1], got {p_correct}")));
    }
    let others = (n_options - 1) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..experiments {
        let mut seen: u128 = 0;
        for _ in 0..n_trials {
            let u: f64 = rng.random();
            let option = if u < p_correct {
                0
            } else {
                let r = (u - p_correct) / (1.0 - p_correct);
                1 + ((r * others) as usize).min(n_options - 2)
            };
            seen |= 1u128 << option;
        }
        let distinct = seen.count_ones() as f64;
        sum += distinct;
        sum_sq += distinct * distinct;
    }
    let n = experiments as f64;
    let mean = sum / n;
    let stderr = if experiments == 1 {
        0.0
    } else {
        ((sum_sq - n * mean * mean).max(0.0) / (n - 1.0)).sqrt() / n.sqrt()
    };
    Ok((mean, stderr))
}

/// Option distribution of continuations sampled from `prefix` under the
/// clean observation.
pub fn option_distribution_from_prefix(
    policy: &Policy,
    task: &TreeTask,
    prefix: &[usize],
    cap: u64,
) -> Result<Vec<f64>> {
    let tree = &task.tree;
    tree.validate_prefix(prefix)?;
    let remaining = (tree.depth - prefix.len()) as u32;
    let paths = (tree.branching as u64).pow(remaining);
    if paths > cap {
        return Err(Error::EnumerationInfeasible { paths, cap });
    }
    let mut dist = vec![0.0; tree.n_options];
    let mut stack: Vec<(Vec<usize>, f64)> = vec![(prefix.to_vec(), 1.0)];
    while let Some((actions, weight)) = stack.pop() {
        if actions.len() == tree.depth {
            dist[tree.option_of(&actions)] += weight;
            continue;
        }
        let node = tree.node_at(&actions);
        let probs = policy.action_distribution(node, &task.observation);
        for (a, &p) in probs.iter().enumerate() {
            let mut next = actions.clone();
            next.push(a);
            stack.push((next, weight * p));
        }
    }
    Ok(dist)
}

/// Exact expected total reward under full enumeration, in the noise-free
/// mode: sum_tau P(tau) * E[total reward | tau]. The consistency expectation
/// uses the prefix's continuation distribution, so it is exact when the
/// sampler's noise is ignored (sigma treated as 0).
pub fn exact_expected_reward(
    policy: &Policy,
    task: &TreeTask,
    reward_config: &RewardConfig,
    sampler_config: Option<&SamplerConfig>,
    cap: u64,
) -> Result<f64> {
    let tree = &task.tree;
    let paths = enumerate_trajectories(tree, cap)?;
    let mut prefix_cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut total = 0.0;
    for actions in &paths {
        let mut prob = 1.0;
        for t in 0..actions.len() {
            let node = tree.node_at(&actions[..t]);
            prob *= policy.action_distribution(node, &task.observation)[actions[t]];
        }
        let correct = tree.option_of(actions) == task.correct_option;
        let mut reward = reward_config.accuracy_weight * if correct { 1.0 } else { 0.0 }
            + reward_config.format_weight;
        if let Some(sampler) = sampler_config {
            let keep = ((sampler.truncation_ratio * tree.depth as f64).floor() as usize)
                .min(tree.depth - 1);
            let prefix = actions[..keep].to_vec();
            let expected_con = match prefix_cache.entry(prefix) {
                std::collections::hash_map::Entry::Occupied(e) => *e.get(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    let q = option_distribution_from_prefix(policy, task, e.key(), cap)?;
                    let distinct = expected_distinct_categorical(&q, sampler.n_resamples);
                    let m = sampler.n_resamples as f64;
                    let raw = reward_config.consistency_weight * (m - distinct);
                    *e.insert(if reward_config.normalize_consistency { raw / m } else { raw })
                }
            };
            reward += expected_con;
        }
        total += prob * reward;
    }
    Ok(total)
}

/// Exact policy gradient of the expected (accuracy + format) reward by the
/// score-function identity: sum_tau P(tau) R(tau) grad log P(tau). The
/// reward here is independent of the parameters, which is what makes the
/// identity the full gradient of `exact_expected_reward` (with the
/// consistency term disabled).
pub fn exact_policy_gradient(
    policy: &Policy,
    task: &TreeTask,
    reward_config: &RewardConfig,
    cap: u64,
) -> Result<PolicyGrad> {
    let tree = &task.tree;
    let paths = enumerate_trajectories(tree, cap)?;
    let mut grad = PolicyGrad::zeros_like(policy);
    for actions in &paths {
        let mut prob = 1.0;
        for t in 0..actions.len() {
            let node = tree.node_at(&actions[..t]);
            prob *= policy.action_distribution(node, &task.observation)[actions[t]];
        }
        let correct = tree.option_of(actions) == task.correct_option;
        let reward = reward_config.accuracy_weight * if correct { 1.0 } else { 0.0 }
            + reward_config.format_weight;
        if reward == 0.0 {
            continue;
        }
        policy.accumulate_log_prob_gradient(tree, &task.observation, actions, prob * reward, &mut grad);
    }
    Ok(grad)
}

/// Exact entropy of the trajectory distribution, -sum_tau P ln P.
pub fn exact_trajectory_entropy(policy: &Policy, task: &TreeTask, cap: u64) -> Result<f64> {
    let tree = &task.tree;
    let mut entropy = 0.0;
    for actions in enumerate_trajectories(tree, cap)? {
        let lp = policy.log_prob_of_actions(tree, &task.observation, &actions)?;
        let p = lp.exp();
        if p > 0.0 {
            entropy -= p * lp;
        }
    }
    Ok(entropy)
}

/// Default grids for the closed-form vs Monte-Carlo comparison.
pub const THEORY_GRID_N: [usize; 4] = [2, 3, 4, 6];
pub const THEORY_GRID_P: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const THEORY_GRID_M: [usize; 4] = [1, 2, 4, 8];

/// One cell of the closed-form vs Monte-Carlo comparison.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryCell {
    pub n: usize,
    pub p: f64,
    pub m: usize,
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub pass: bool,
}

/// Runs the grid comparison at three standard errors per cell.
/// `closed_form_bias` shifts the reported closed form and exists as a
/// negative control for the pass/fail machinery; 0 for real verification.
pub fn run_theory_grid(
    ns: &[usize],
    ps: &[f64],
    ms: &[usize],
    experiments: usize,
    seed: u64,
    closed_form_bias: f64,
) -> Result<Vec<TheoryCell>> {
    let root = RngStream::from_seed(seed).child(scopes::THEORY);
    let mut cells = Vec::new();
    let mut idx = 0u64;
    for &n in ns {
        for &p in ps {
            for &m in ms {
                let closed_form = expected_distinct_options(n, p, m)? + closed_form_bias;
                let (mc_mean, mc_stderr) =
                    monte_carlo_distinct_options(n, p, m, experiments, &mut root.child(idx).rng())?;
                let pass = (closed_form - mc_mean).abs() <= 3.0 * mc_stderr;
                cells.push(TheoryCell { n, p, m, closed_form, mc_mean, mc_stderr, pass });
                idx += 1;
            }
        }
    }
    Ok(cells)
}
