//! A desk-scale reinforcement-learning laboratory for studying consistency
//! rewards on synthetic reasoning trees.
//!
//! The environment is a perfect B-ary decision tree per task with one
//! faithful root-to-leaf path and option-labeled leaves. A linear softmax
//! policy reasons over a noisy observation of the task; training shapes the
//! binary outcome reward with a self-consistency bonus computed by
//! truncating each trajectory, perturbing the observation, and resampling
//! continuations. Everything stochastic has an exact enumeration or
//! closed-form oracle next to it.

pub mod config;
pub mod error;
pub mod estimators;
pub mod oracles;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod sampler;
pub mod trainer;
pub mod tree_env;

pub mod cli;

pub use config::{EnvConfig, OptimizerKind, PolicyConfig, RunConfig, TrainerConfig};
pub use error::{Error, Result};
pub use estimators::{
    compute_advantages, grpo_advantages, kl_penalty_k3, reinforce_pp_transform, rloo_advantages,
    AdvantageBatch, Algorithm, EstimatorConfig, Rollout, RolloutGroup,
};
pub use oracles::{
    exact_expected_reward, exact_policy_gradient, expected_distinct_options,
    monte_carlo_distinct_options, run_theory_grid, TheoryCell,
};
pub use policy::{Policy, PolicyGrad, PolicySnapshot};
pub use rewards::{compose, consistency_reward, format_reward, verify, RewardBreakdown, RewardConfig};
pub use rng::RngStream;
pub use sampler::{collect_answers, perturb_observation, truncate, AnswerSet, SamplerConfig};
pub use trainer::{
    init_policy, run_training, train, train_with_observer, unfaithful_mass, StepMetrics, TaskSet,
    TrainSetup,
};
pub use tree_env::{
    enumerate_trajectories, generate_tree, trajectory_probability, ReasoningTree, Trajectory,
    TreeTask, DEFAULT_ENUMERATION_CAP,
};
