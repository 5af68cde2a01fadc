//! Advantage and baseline computation: group-relative standardization,
//! leave-one-out baselines, the REINFORCE++ batch transform, and the k3 KL
//! penalty.
//!
//! All estimators consume shaped scalar rewards (total reward minus
//! kl_coef times the summed k3 penalties) and are pure functions of their
//! inputs. Standardizing estimators divide by the exact population standard
//! deviation; groups whose std does not exceed `epsilon` are degenerate and
//! yield zero advantages instead of amplified noise.

use crate::error::{Error, Result};
use crate::policy::{Policy, PolicySnapshot};
use crate::rewards::RewardBreakdown;
use crate::tree_env::{Trajectory, TreeTask};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Grpo,
    Rloo,
    ReinforcePp,
    ReinforcePpBaseline,
}

impl Algorithm {
    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::Grpo => "grpo",
            Algorithm::Rloo => "rloo",
            Algorithm::ReinforcePp => "reinforce_pp",
            Algorithm::ReinforcePpBaseline => "reinforce_pp_baseline",
        }
    }

    /// Default rollouts per task: 16 for group-based estimators, 1 for
    /// plain REINFORCE++.
    pub fn default_samples_per_prompt(&self) -> usize {
        match self {
            Algorithm::ReinforcePp => 1,
            _ => 16,
        }
    }

    pub fn needs_group(&self) -> bool {
        matches!(self, Algorithm::Grpo | Algorithm::Rloo | Algorithm::ReinforcePpBaseline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub algorithm: Algorithm,
    pub kl_coef: f64,
    /// Symmetric clip bound on shaped rewards (REINFORCE++ variants only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_clip: Option<f64>,
    /// Degeneracy threshold for standard deviations.
    pub epsilon: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { algorithm: Algorithm::Rloo, kl_coef: 0.0, reward_clip: None, epsilon: 1e-8 }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kl_coef < 0.0 || !self.kl_coef.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "estimator.kl_coef: must be finite and >= 0, got {}",
                self.kl_coef
            )));
        }
        if let Some(clip) = self.reward_clip {
            if !(clip > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "estimator.reward_clip: must be > 0 when present, got {clip}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "estimator.epsilon: must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One rollout: trajectory, its reward breakdown and (optionally) the
/// per-step k3 penalties against the reference policy.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub reward: RewardBreakdown,
    pub kl_penalties: Vec<f64>,
}

impl Rollout {
    pub fn kl_sum(&self) -> f64 {
        self.kl_penalties.iter().sum()
    }
}

/// K rollouts for one task, the unit consumed by every estimator.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub task_id: String,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn group_size(&self) -> usize {
        self.rollouts.len()
    }

    fn shaped_rewards(&self, kl_coef: f64) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward.total - kl_coef * r.kl_sum()).collect()
    }
}

/// Per-rollout scalar advantages aligned with one group's rollout order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub estimator_tag: &'static str,
    pub values: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Group-relative standardization: A_i = (r_i - mean) / std with the
/// population standard deviation. Degenerate groups yield zeros.
pub fn grpo_advantages(rewards: &[f64], epsilon: f64) -> Result<AdvantageBatch> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall { need: 2, got: rewards.len() });
    }
    let mu = mean(rewards);
    let std = population_std(rewards, mu);
    let values = if std <= epsilon {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mu) / std).collect()
    };
    Ok(AdvantageBatch { estimator_tag: Algorithm::Grpo.tag(), values })
}

/// Leave-one-out baseline: A_i = r_i - mean of the other K-1 rewards.
pub fn rloo_advantages(rewards: &[f64]) -> Result<AdvantageBatch> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::GroupTooSmall { need: 2, got: k });
    }
    let sum: f64 = rewards.iter().sum();
    let values = rewards.iter().map(|&r| r - (sum - r) / (k as f64 - 1.0)).collect();
    Ok(AdvantageBatch { estimator_tag: Algorithm::Rloo.tag(), values })
}

/// Per-step k3 KL penalty of the live policy against a frozen reference on
/// the trajectory's actions: rho - 1 - ln(rho) with
/// rho = pi_ref(a|s) / pi_live(a|s). Non-negative by convexity.
pub fn kl_penalty_k3(
    live: &Policy,
    reference: &PolicySnapshot,
    task: &TreeTask,
    trajectory: &Trajectory,
) -> Result<Vec<f64>> {
    task.tree
        .validate_path(&trajectory.actions)
        .map_err(|e| Error::InvalidTrajectory(e.to_string()))?;
    let mut penalties = Vec::with_capacity(trajectory.actions.len());
    for t in 0..trajectory.actions.len() {
        let node = task.tree.node_at(&trajectory.actions[..t]);
        let a = trajectory.actions[t];
        let lp_live = live.log_action_distribution(node, &task.observation)[a];
        let lp_ref = reference.policy().log_action_distribution(node, &task.observation)[a];
        let log_rho = lp_ref - lp_live;
        penalties.push((log_rho.exp_m1() - log_rho).max(0.0));
    }
    Ok(penalties)
}

/// REINFORCE++ batch transform: shape rewards with the KL penalty, clip,
/// optionally subtract the per-task group mean (the "-baseline" variant),
/// then standardize over the whole update batch.
///
/// `kl_sequences` may be empty (treated as all-zero); otherwise it must be
/// congruent with `rewards`.
pub fn reinforce_pp_transform(
    rewards: &[Vec<f64>],
    kl_sequences: &[Vec<Vec<f64>>],
    config: &EstimatorConfig,
    per_task_baseline: bool,
) -> Result<Vec<AdvantageBatch>> {
    if rewards.is_empty() || rewards.iter().all(|g| g.is_empty()) {
        return Err(Error::EmptyBatch);
    }
    if !kl_sequences.is_empty() {
        let congruent = kl_sequences.len() == rewards.len()
            && kl_sequences.iter().zip(rewards).all(|(k, r)| k.len() == r.len());
        if !congruent {
            return Err(Error::InvalidConfig(
                "kl sequences are not congruent with batch rewards".into(),
            ));
        }
    }

    let tag = if per_task_baseline {
        Algorithm::ReinforcePpBaseline.tag()
    } else {
        Algorithm::ReinforcePp.tag()
    };

    let mut shaped: Vec<Vec<f64>> = rewards
        .iter()
        .enumerate()
        .map(|(g, group)| {
            group
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let kl: f64 = kl_sequences
                        .get(g)
                        .map(|ks| ks[i].iter().sum())
                        .unwrap_or(0.0);
                    let mut v = r - config.kl_coef * kl;
                    if let Some(clip) = config.reward_clip {
                        v = v.clamp(-clip, clip);
                    }
                    v
                })
                .collect()
        })
        .collect();

    if per_task_baseline {
        for group in shaped.iter_mut() {
            let mu = mean(group);
            group.iter_mut().for_each(|v| *v -= mu);
        }
    }

    let flat: Vec<f64> = shaped.iter().flatten().copied().collect();
    let mu = mean(&flat);
    let std = population_std(&flat, mu);
    let normalize = |v: f64| if std <= config.epsilon { 0.0 } else { (v - mu) / std };

    Ok(shaped
        .into_iter()
        .map(|group| AdvantageBatch {
            estimator_tag: tag,
            values: group.into_iter().map(normalize).collect(),
        })
        .collect())
}

/// Dispatches the configured estimator over a batch of rollout groups,
/// returning one advantage batch per group in order.
pub fn compute_advantages(
    config: &EstimatorConfig,
    groups: &[RolloutGroup],
) -> Result<Vec<AdvantageBatch>> {
    if groups.is_empty() {
        return Err(Error::EmptyBatch);
    }
    match config.algorithm {
        Algorithm::Grpo => groups
            .iter()
            .map(|g| grpo_advantages(&g.shaped_rewards(config.kl_coef), config.epsilon))
            .collect(),
        Algorithm::Rloo => groups
            .iter()
            .map(|g| rloo_advantages(&g.shaped_rewards(config.kl_coef)))
            .collect(),
        Algorithm::ReinforcePp | Algorithm::ReinforcePpBaseline => {
            let rewards: Vec<Vec<f64>> =
                groups.iter().map(|g| g.rollouts.iter().map(|r| r.reward.total).collect()).collect();
            let kl: Vec<Vec<Vec<f64>>> = groups
                .iter()
                .map(|g| g.rollouts.iter().map(|r| r.kl_penalties.clone()).collect())
                .collect();
            reinforce_pp_transform(
                &rewards,
                &kl,
                config,
                config.algorithm == Algorithm::ReinforcePpBaseline,
            )
        }
    }
}
