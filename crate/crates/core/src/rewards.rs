//! Reward components and their composition r = r_for + r_acc + r_con.
//!
//! The accuracy reward is the binary outcome verifier (1 iff the terminal
//! option matches the task's correct option), the format reward is 1 iff the
//! trajectory reached a leaf, and the consistency reward converts the
//! distinct-answer count of a resampled answer set into a bonus. The
//! breakdown stores each component already multiplied by its weight so the
//! total is their plain sum.

use crate::error::{Error, Result};
use crate::sampler::AnswerSet;
use crate::tree_env::{Trajectory, TreeTask};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub accuracy_weight: f64,
    pub format_weight: f64,
    /// Scaling coefficient c of the consistency bonus.
    pub consistency_weight: f64,
    /// When true r_con = c (m - |A|) / m, otherwise c (m - |A|).
    pub normalize_consistency: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            accuracy_weight: 1.0,
            format_weight: 0.0,
            consistency_weight: 0.5,
            normalize_consistency: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rewards.accuracy_weight", self.accuracy_weight),
            ("rewards.format_weight", self.format_weight),
            ("rewards.consistency_weight", self.consistency_weight),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name}: must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Accuracy-only variant used as the no-shaping baseline.
    pub fn accuracy_only(&self) -> Self {
        Self { consistency_weight: 0.0, ..self.clone() }
    }
}

/// Weighted reward components; `total` is exactly their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_for: f64,
    pub r_con: f64,
    pub total: f64,
}

/// Binary outcome verifier: 1 iff the trajectory's terminal option solves the task.
pub fn verify(task: &TreeTask, trajectory: &Trajectory) -> Result<f64> {
    match trajectory.terminal_option {
        Some(option) if trajectory.is_complete => {
            Ok(if option == task.correct_option { 1.0 } else { 0.0 })
        }
        _ => Err(Error::IncompleteTrajectory),
    }
}

/// 1 iff the trajectory reached a leaf within the depth bound.
pub fn format_reward(trajectory: &Trajectory) -> f64 {
    if trajectory.is_complete {
        1.0
    } else {
        0.0
    }
}

/// Consistency bonus from the distinct-answer count of `answer_set`.
pub fn consistency_reward(answer_set: &AnswerSet, m: usize, c: f64, normalize: bool) -> Result<f64> {
    let distinct = answer_set.distinct_count;
    if distinct < 1 || distinct > m {
        return Err(Error::OutOfRange(format!(
            "distinct count {distinct} outside [1, {m}]"
        )));
    }
    let raw = c * (m - distinct) as f64;
    Ok(if normalize { raw / m as f64 } else { raw })
}

/// Composes the weighted breakdown. `answer_set` is `None` when
/// self-consistency sampling is disabled; the consistency term is then zero.
pub fn compose(
    task: &TreeTask,
    trajectory: &Trajectory,
    answer_set: Option<&AnswerSet>,
    config: &RewardConfig,
) -> Result<RewardBreakdown> {
    let r_acc = config.accuracy_weight * verify(task, trajectory)?;
    let r_for = config.format_weight * format_reward(trajectory);
    let r_con = match answer_set {
        Some(set) => consistency_reward(
            set,
            set.size(),
            config.consistency_weight,
            config.normalize_consistency,
        )?,
        None => 0.0,
    };
    Ok(RewardBreakdown { r_acc, r_for, r_con, total: r_acc + r_for + r_con })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Policy;
    use crate::rng::RngStream;
    use crate::sampler::{collect_answers, SamplerConfig};
    use crate::tree_env::{generate_tree, Trajectory, TreeTask};
    use proptest::prelude::*;

    fn fixture() -> (TreeTask, Trajectory, Trajectory, Trajectory) {
        // Depth-2 binary tree, faithful path known; find an unfaithful path
        // hitting the correct option and a wrong-option path.
        let tree = generate_tree(40, 2, 2, 2).unwrap();
        let task = TreeTask::new(tree, vec![0.0; 4], "fixture".into()).unwrap();
        let faithful = Trajectory::complete(&task.tree, task.tree.faithful_path.clone(), vec![]);
        let paths = crate::tree_env::enumerate_trajectories(&task.tree, 64).unwrap();
        let lucky = paths
            .iter()
            .find(|p| !task.tree.is_faithful(p) && task.tree.option_of(p) == task.correct_option)
            .cloned();
        let wrong = paths
            .iter()
            .find(|p| task.tree.option_of(p) != task.correct_option)
            .cloned()
            .unwrap();
        let lucky = lucky.map(|p| Trajectory::complete(&task.tree, p, vec![]));
        let wrong = Trajectory::complete(&task.tree, wrong, vec![]);
        (task, faithful, lucky.expect("seed 40 has a lucky path"), wrong)
    }

    #[test]
    fn verify_examples() {
        let (task, faithful, lucky, wrong) = fixture();
        assert_eq!(verify(&task, &faithful).unwrap(), 1.0);
        assert_eq!(verify(&task, &lucky).unwrap(), 1.0);
        assert_eq!(verify(&task, &wrong).unwrap(), 0.0);
        assert!(verify(&task, &Trajectory::partial(vec![0], vec![0.0])).is_err());
    }

    #[test]
    fn format_reward_examples() {
        let (_, faithful, _, _) = fixture();
        assert_eq!(format_reward(&faithful), 1.0);
        assert_eq!(format_reward(&Trajectory::partial(vec![0], vec![0.0])), 0.0);
    }

    #[test]
    fn consistency_reward_examples() {
        let set1 = AnswerSet::new(vec![2, 2, 2, 2]);
        assert!((consistency_reward(&set1, 4, 1.0, true).unwrap() - 0.75).abs() < 1e-15);

        let set4 = AnswerSet::new(vec![0, 1, 2, 3]);
        assert_eq!(consistency_reward(&set4, 4, 7.0, true).unwrap(), 0.0);
        assert_eq!(consistency_reward(&set4, 4, 7.0, false).unwrap(), 0.0);

        let set2 = AnswerSet::new(vec![0, 0, 1, 1]);
        assert!((consistency_reward(&set2, 4, 0.5, true).unwrap() - 0.25).abs() < 1e-15);

        // Unnormalized Algorithm-style form.
        assert!((consistency_reward(&set2, 4, 0.5, false).unwrap() - 1.0).abs() < 1e-15);

        assert!(consistency_reward(&set2, 1, 0.5, true).is_err());
    }

    #[test]
    fn compose_examples() {
        let (task, faithful, lucky, wrong) = fixture();
        let cfg = RewardConfig {
            accuracy_weight: 1.0,
            format_weight: 0.0,
            consistency_weight: 1.0,
            normalize_consistency: true,
        };

        let b = compose(&task, &faithful, Some(&AnswerSet::new(vec![0, 0, 0, 0])), &cfg).unwrap();
        assert!((b.total - 1.75).abs() < 1e-12);
        assert!((b.total - (b.r_acc + b.r_for + b.r_con)).abs() < 1e-12);

        let b = compose(&task, &wrong, Some(&AnswerSet::new(vec![0, 1, 2, 3])), &cfg).unwrap();
        assert_eq!(b.total, 0.0);

        let b = compose(&task, &lucky, Some(&AnswerSet::new(vec![0, 1, 2, 2])), &cfg).unwrap();
        assert!((b.total - 1.25).abs() < 1e-12);

        let b = compose(&task, &faithful, None, &cfg).unwrap();
        assert_eq!(b.r_con, 0.0);
    }

    #[test]
    fn consistency_strictly_decreases_in_distinct_count() {
        for m in 2..8 {
            let mut last = f64::INFINITY;
            for distinct in 1..=m {
                let answers: Vec<usize> = (0..m).map(|i| i.min(distinct - 1)).collect();
                let set = AnswerSet::new(answers);
                assert_eq!(set.distinct_count, distinct);
                let r = consistency_reward(&set, m, 0.7, true).unwrap();
                assert!(r < last, "m={m} distinct={distinct}");
                last = r;
            }
        }
    }

    #[test]
    fn faithful_consistency_beats_lucky_on_constructed_regime() {
        // Faithful continuation deterministic (saturated biases along the
        // faithful path, zero weights), unfaithful continuations entropic.
        let tree = generate_tree(40, 3, 3, 4).unwrap();
        let task = TreeTask::new(tree, vec![0.0; 4], "ordering".into()).unwrap();
        let policy = Policy::saturated_on(&task.tree, &task.tree.faithful_path.clone(), 4, 50.0);
        let cfg = SamplerConfig { truncation_ratio: 0.5, n_resamples: 4, sigma_min: 0.0, sigma_max: 0.0 };
        let rcfg = RewardConfig::default();

        let faithful = Trajectory::complete(&task.tree, task.tree.faithful_path.clone(), vec![]);
        let lucky_path = crate::tree_env::enumerate_trajectories(&task.tree, 64)
            .unwrap()
            .into_iter()
            .find(|p| {
                !task.tree.is_faithful(p)
                    && task.tree.option_of(p) == task.correct_option
                    && p[0] != task.tree.faithful_path[0]
            })
            .expect("tree has a lucky path diverging at the root");
        let lucky = Trajectory::complete(&task.tree, lucky_path, vec![]);

        let root = RngStream::from_seed(7);
        let n = 2000;
        let mean = |traj: &Trajectory, tag: u64| -> f64 {
            (0..n)
                .map(|i| {
                    let set =
                        collect_answers(&policy, &task, traj, &cfg, &root.child(tag).child(i))
                            .unwrap();
                    compose(&task, traj, Some(&set), &rcfg).unwrap().r_con
                })
                .sum::<f64>()
                / n as f64
        };
        let mean_faithful = mean(&faithful, 0);
        let mean_lucky = mean(&lucky, 1);
        assert!((mean_faithful - 0.5 * 0.75).abs() < 1e-12, "deterministic max bonus");
        assert!(mean_faithful > mean_lucky, "{mean_faithful} vs {mean_lucky}");
    }

    proptest! {
        #[test]
        fn consistency_bounds_and_extremes(m in 1usize..9, distinct in 1usize..9, c in 0.0f64..4.0) {
            prop_assume!(distinct <= m);
            let answers: Vec<usize> = (0..m).map(|i| i.min(distinct - 1)).collect();
            let set = AnswerSet::new(answers);
            let r = consistency_reward(&set, m, c, true).unwrap();
            prop_assert!(r >= 0.0);
            prop_assert!(r <= c * (m as f64 - 1.0) / m as f64 + 1e-15);
            if distinct == 1 {
                prop_assert!((r - c * (m as f64 - 1.0) / m as f64).abs() < 1e-15);
            }
            if distinct == m {
                prop_assert_eq!(r, 0.0);
            }
        }
    }
}
