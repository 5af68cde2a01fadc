//! Self-consistency sampling: truncate an initial trajectory, perturb the
//! observation, resample continuations, and collect the answers.
//!
//! Each of the `m` resample iterations draws a fresh noise strength from
//! U(sigma_min, sigma_max), adds i.i.d. zero-mean Gaussian noise to every
//! observation coordinate, and resumes sampling from the kept prefix. Only
//! the distinct-answer count leaves this module; turning it into a reward is
//! the rewards module's job.

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::RngStream;
use crate::tree_env::{Trajectory, TreeTask};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Fraction of the initial trajectory kept as the resampling prefix.
    pub truncation_ratio: f64,
    /// Number of resampled continuations per initial trajectory.
    pub n_resamples: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { truncation_ratio: 0.8, n_resamples: 4, sigma_min: 0.0, sigma_max: 0.5 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.truncation_ratio > 0.0 && self.truncation_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sampler.truncation_ratio: must lie in (0, 1), got {}",
                self.truncation_ratio
            )));
        }
        if self.n_resamples < 1 {
            return Err(Error::InvalidConfig("sampler.n_resamples: must be >= 1".into()));
        }
        if self.sigma_min < 0.0 || self.sigma_max < 0.0 || self.sigma_min > self.sigma_max {
            return Err(Error::InvalidConfig(format!(
                "sampler.sigma_min/sigma_max: need 0 <= min <= max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }
}

/// The multiset of terminal options produced by the resamples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub answers: Vec<usize>,
    pub distinct_count: usize,
}

impl AnswerSet {
    pub fn new(answers: Vec<usize>) -> Self {
        let mut seen = answers.clone();
        seen.sort_unstable();
        seen.dedup();
        let distinct_count = seen.len();
        Self { answers, distinct_count }
    }

    pub fn size(&self) -> usize {
        self.answers.len()
    }
}

/// Kept prefix of a complete trajectory: floor(k * L) actions, clamped to
/// L - 1 so the final step is always resampled.
pub fn truncate(trajectory: &Trajectory, k: f64) -> Result<Vec<usize>> {
    if !trajectory.is_complete {
        return Err(Error::IncompleteTrajectory);
    }
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::OutOfRange(format!("truncation ratio must lie in (0, 1), got {k}")));
    }
    let len = trajectory.actions.len();
    let keep = ((k * len as f64).floor() as usize).min(len - 1);
    Ok(trajectory.actions[..keep].to_vec())
}

/// observation + sigma * z with z ~ N(0, I) and sigma ~ U(sigma_min, sigma_max),
/// one sigma per call.
pub fn perturb_observation(
    observation: &[f64],
    sigma_min: f64,
    sigma_max: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    assert!(
        sigma_min >= 0.0 && sigma_min <= sigma_max,
        "need 0 <= sigma_min <= sigma_max"
    );
    let sigma = sigma_min + (sigma_max - sigma_min) * rng.random::<f64>();
    observation
        .iter()
        .map(|&x| x + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Runs the m-iteration resampling loop and returns the collected answers.
/// Iteration i draws from the ith child of `stream`, so results are a pure
/// function of (policy, task, trajectory, config, stream).
pub fn collect_answers(
    policy: &Policy,
    task: &TreeTask,
    trajectory: &Trajectory,
    config: &SamplerConfig,
    stream: &RngStream,
) -> Result<AnswerSet> {
    let prefix = truncate(trajectory, config.truncation_ratio)?;
    let mut answers = Vec::with_capacity(config.n_resamples);
    for i in 0..config.n_resamples {
        let mut rng = stream.child(i as u64).rng();
        let perturbed =
            perturb_observation(&task.observation, config.sigma_min, config.sigma_max, &mut rng);
        let continuation = policy.continue_on(&task.tree, &perturbed, &prefix, &mut rng)?;
        answers.push(continuation.terminal_option.expect("continuation reaches a leaf"));
    }
    Ok(AnswerSet::new(answers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::expected_distinct_options;
    use crate::tree_env::{generate_tree, TreeTask};
    use proptest::prelude::*;

    fn task_with_obs(seed: u64, depth: usize, branching: usize, n_options: usize, d: usize) -> TreeTask {
        let tree = generate_tree(seed, depth, branching, n_options).unwrap();
        TreeTask::new(tree, vec![0.25; d], format!("t{seed}")).unwrap()
    }

    #[test]
    fn truncate_examples() {
        let mk = |len: usize| Trajectory {
            actions: vec![0; len],
            step_logprobs: vec![0.0; len],
            terminal_option: Some(0),
            is_faithful: false,
            is_complete: true,
        };
        assert_eq!(truncate(&mk(10), 0.8).unwrap().len(), 8);
        assert_eq!(truncate(&mk(2), 0.1).unwrap().len(), 0);
        assert_eq!(truncate(&mk(5), 0.99).unwrap().len(), 4);
        assert!(truncate(&Trajectory::partial(vec![0], vec![0.0]), 0.5).is_err());
        assert!(truncate(&mk(4), 0.0).is_err());
        assert!(truncate(&mk(4), 1.0).is_err());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let obs = vec![1.5, -2.0, 0.0, 3.25];
        let out = perturb_observation(&obs, 0.0, 0.0, &mut RngStream::from_seed(3).rng());
        assert_eq!(out, obs);
    }

    #[test]
    fn unit_sigma_noise_variance() {
        let obs = vec![0.0; 10_000];
        let out = perturb_observation(&obs, 1.0, 1.0, &mut RngStream::from_seed(9).rng());
        let mean: f64 = out.iter().sum::<f64>() / out.len() as f64;
        let var: f64 = out.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / out.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "sample variance {var}");
    }

    #[test]
    fn perturbation_is_deterministic_given_stream() {
        let obs = vec![0.5; 16];
        let a = perturb_observation(&obs, 0.1, 0.4, &mut RngStream::from_seed(4).rng());
        let b = perturb_observation(&obs, 0.1, 0.4, &mut RngStream::from_seed(4).rng());
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_policy_yields_single_answer() {
        let task = task_with_obs(5, 3, 3, 4, 4);
        let policy = Policy::saturated_on(&task.tree, &task.tree.faithful_path.clone(), 4, 50.0);
        let traj = policy
            .sample_trajectory(&task, &mut RngStream::from_seed(0).rng())
            .unwrap();
        for k in [0.2, 0.5, 0.9] {
            let cfg = SamplerConfig { truncation_ratio: k, n_resamples: 4, sigma_min: 0.0, sigma_max: 0.0 };
            let set = collect_answers(&policy, &task, &traj, &cfg, &RngStream::from_seed(1)).unwrap();
            assert_eq!(set.distinct_count, 1);
            assert!(set.answers.iter().all(|&a| a == task.correct_option));
        }
    }

    #[test]
    fn uniform_depth_one_matches_closed_form_expectation() {
        // Depth-1 tree with 4 distinct options: the prefix is empty and each
        // resample is an i.i.d. uniform categorical draw, exactly the setting
        // of the closed form at p = 1/4, N = 4, M = 4.
        let task = task_with_obs(7, 1, 4, 4, 3);
        let policy = Policy::uniform(&task.tree, 3);
        let traj = policy
            .sample_trajectory(&task, &mut RngStream::from_seed(0).rng())
            .unwrap();
        let cfg = SamplerConfig { truncation_ratio: 0.5, n_resamples: 4, sigma_min: 0.0, sigma_max: 0.0 };
        let expected = expected_distinct_options(4, 0.25, 4).unwrap();
        assert!((expected - 2.734375).abs() < 1e-12);

        let trials = 100_000;
        let root = RngStream::from_seed(42);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for t in 0..trials {
            let set = collect_answers(&policy, &task, &traj, &cfg, &root.child(t)).unwrap();
            let d = set.distinct_count as f64;
            sum += d;
            sum_sq += d * d;
        }
        let n = trials as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "mean {mean}, expected {expected}, se {se}"
        );
    }

    #[test]
    fn single_resample_is_always_consistent() {
        let task = task_with_obs(9, 2, 3, 3, 4);
        let policy = Policy::seeded_random(&task.tree, 4, 1.0, 1);
        let traj = policy
            .sample_trajectory(&task, &mut RngStream::from_seed(2).rng())
            .unwrap();
        let cfg = SamplerConfig { truncation_ratio: 0.5, n_resamples: 1, ..Default::default() };
        let set = collect_answers(&policy, &task, &traj, &cfg, &RngStream::from_seed(3)).unwrap();
        assert_eq!(set.distinct_count, 1);
    }

    #[test]
    fn mean_distinct_is_non_increasing_in_truncation_ratio() {
        // Entropic policy on a depth-4 tree: longer kept prefixes leave fewer
        // steps to diverge, so the mean distinct count falls as k rises.
        let samples = 400;
        let mut means = Vec::new();
        for k in [0.2, 0.5, 0.8] {
            let cfg = SamplerConfig { truncation_ratio: k, n_resamples: 4, sigma_min: 0.0, sigma_max: 0.3 };
            let mut total = 0.0;
            let mut count = 0;
            for seed in 0..10u64 {
                let task = task_with_obs(seed, 4, 2, 4, 4);
                let policy = Policy::seeded_random(&task.tree, 4, 0.3, seed);
                let root = RngStream::from_seed(seed ^ 0xF00D);
                for s in 0..samples {
                    let traj = policy
                        .sample_trajectory(&task, &mut root.child(s).child(0).rng())
                        .unwrap();
                    let set =
                        collect_answers(&policy, &task, &traj, &cfg, &root.child(s).child(1))
                            .unwrap();
                    total += set.distinct_count as f64;
                    count += 1;
                }
            }
            means.push(total / count as f64);
        }
        assert!(means[0] >= means[1] - 0.01 && means[1] >= means[2] - 0.01, "means {means:?}");
        assert!(means[0] > means[2] + 0.05, "expected clear decrease, got {means:?}");
    }

    proptest! {
        #[test]
        fn distinct_count_bounds(seed in 0u64..200, m in 1usize..6, k in 1u32..10) {
            let task = task_with_obs(seed, 2, 3, 4, 3);
            let policy = Policy::seeded_random(&task.tree, 3, 1.0, seed);
            let traj = policy
                .sample_trajectory(&task, &mut RngStream::from_seed(seed).rng())
                .unwrap();
            let cfg = SamplerConfig {
                truncation_ratio: k as f64 / 10.0,
                n_resamples: m,
                sigma_min: 0.0,
                sigma_max: 0.5,
            };
            let set = collect_answers(&policy, &task, &traj, &cfg, &RngStream::from_seed(seed ^ 1)).unwrap();
            prop_assert!(set.distinct_count >= 1);
            prop_assert!(set.distinct_count <= m.min(task.tree.n_options));
            prop_assert_eq!(set.size(), m);
        }
    }
}
