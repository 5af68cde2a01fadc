//! Synthetic reasoning-tree environment.
//!
//! A task is a perfect B-ary decision tree of depth D. Each leaf carries one
//! of `n_options` answer labels, exactly one root-to-leaf path is designated
//! faithful, and the faithful leaf carries the correct label. Trees are small
//! enough to enumerate, which is what makes exact probability and gradient
//! oracles possible.

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::RngStream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default ceiling on the number of root-to-leaf paths exact oracles will touch.
pub const DEFAULT_ENUMERATION_CAP: u64 = 4096;

/// A perfect B-ary decision tree with labeled leaves and one faithful path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTree {
    pub depth: usize,
    pub branching: usize,
    pub n_options: usize,
    /// Leaf index (lexicographic over action sequences) to option label.
    pub leaf_option_map: Vec<usize>,
    pub faithful_path: Vec<usize>,
    pub seed: u64,
}

impl ReasoningTree {
    pub fn n_leaves(&self) -> usize {
        self.branching.pow(self.depth as u32)
    }

    /// Number of internal decision nodes, (B^D - 1) / (B - 1).
    pub fn n_internal_nodes(&self) -> usize {
        (self.n_leaves() - 1) / (self.branching - 1)
    }

    /// Index of the decision node reached by following `prefix` from the root.
    pub fn node_at(&self, prefix: &[usize]) -> usize {
        let level_offset = (self.branching.pow(prefix.len() as u32) - 1) / (self.branching - 1);
        level_offset + prefix.iter().fold(0, |acc, &a| acc * self.branching + a)
    }

    /// Lexicographic index of the leaf reached by a complete action sequence.
    pub fn leaf_index(&self, actions: &[usize]) -> usize {
        actions.iter().fold(0, |acc, &a| acc * self.branching + a)
    }

    pub fn option_of(&self, actions: &[usize]) -> usize {
        self.leaf_option_map[self.leaf_index(actions)]
    }

    pub fn correct_option(&self) -> usize {
        self.option_of(&self.faithful_path)
    }

    pub fn is_faithful(&self, actions: &[usize]) -> bool {
        actions == self.faithful_path.as_slice()
    }

    /// Checks that `actions` is a complete root-to-leaf path.
    pub fn validate_path(&self, actions: &[usize]) -> Result<()> {
        if actions.len() != self.depth {
            return Err(Error::InvalidPath(format!(
                "expected {} actions, got {}",
                self.depth,
                actions.len()
            )));
        }
        self.validate_prefix(actions)
    }

    /// Checks that `actions` is a valid (possibly empty, possibly complete) prefix.
    pub fn validate_prefix(&self, actions: &[usize]) -> Result<()> {
        if actions.len() > self.depth {
            return Err(Error::InvalidPath(format!(
                "prefix of length {} exceeds depth {}",
                actions.len(),
                self.depth
            )));
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.branching) {
            return Err(Error::InvalidPath(format!(
                "action {bad} out of range for branching {}",
                self.branching
            )));
        }
        Ok(())
    }

    /// Validates all structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidTree("depth must be >= 1".into()));
        }
        if self.branching < 2 {
            return Err(Error::InvalidTree("branching must be >= 2".into()));
        }
        if self.n_options < 2 {
            return Err(Error::InvalidTree("n_options must be >= 2".into()));
        }
        let leaves = checked_leaf_count(self.depth, self.branching)?;
        if self.leaf_option_map.len() as u64 != leaves {
            return Err(Error::InvalidTree(format!(
                "leaf_option_map has {} entries, expected {leaves}",
                self.leaf_option_map.len()
            )));
        }
        self.validate_path(&self.faithful_path)?;
        if let Some(&bad) = self.leaf_option_map.iter().find(|&&o| o >= self.n_options) {
            return Err(Error::InvalidTree(format!(
                "option label {bad} out of range for {} options",
                self.n_options
            )));
        }
        let mut seen = vec![false; self.n_options];
        for &o in &self.leaf_option_map {
            seen[o] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidTree(format!(
                "option {missing} is not reachable from any leaf"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a serialized tree.
    pub fn from_json(text: &str) -> Result<Self> {
        let tree: ReasoningTree = serde_json::from_str(text)?;
        tree.validate()?;
        Ok(tree)
    }
}

fn checked_leaf_count(depth: usize, branching: usize) -> Result<u64> {
    (branching as u64)
        .checked_pow(depth as u32)
        .filter(|&n| n <= 1 << 31)
        .ok_or_else(|| Error::InvalidTree(format!("{branching}^{depth} leaves is too large")))
}

/// One problem instance: a tree plus the observation vector conditioning the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeTask {
    pub tree: ReasoningTree,
    pub observation: Vec<f64>,
    pub correct_option: usize,
    pub task_id: String,
}

impl TreeTask {
    pub fn new(tree: ReasoningTree, observation: Vec<f64>, task_id: String) -> Result<Self> {
        if observation.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("observation has non-finite entries".into()));
        }
        let correct_option = tree.correct_option();
        Ok(Self { tree, observation, correct_option, task_id })
    }
}

/// An action sequence with its per-step log-probabilities under the policy
/// that produced (or scored) it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub actions: Vec<usize>,
    pub step_logprobs: Vec<f64>,
    pub terminal_option: Option<usize>,
    pub is_faithful: bool,
    pub is_complete: bool,
}

impl Trajectory {
    /// A complete root-to-leaf trajectory; terminal option and faithfulness
    /// are read off the tree.
    pub fn complete(tree: &ReasoningTree, actions: Vec<usize>, step_logprobs: Vec<f64>) -> Self {
        debug_assert_eq!(actions.len(), tree.depth);
        let terminal_option = Some(tree.option_of(&actions));
        let is_faithful = tree.is_faithful(&actions);
        Self { actions, step_logprobs, terminal_option, is_faithful, is_complete: true }
    }

    /// A trajectory cut short of a leaf. Only used for exercising error paths
    /// and the format reward; sampling never produces one.
    pub fn partial(actions: Vec<usize>, step_logprobs: Vec<f64>) -> Self {
        Self { actions, step_logprobs, terminal_option: None, is_faithful: false, is_complete: false }
    }

    pub fn log_prob(&self) -> f64 {
        self.step_logprobs.iter().sum()
    }
}

/// Builds a seeded tree satisfying every structural invariant.
///
/// The faithful leaf always carries the correct option; remaining leaves draw
/// labels uniformly, then a post-pass reassigns duplicated labels until every
/// option is reachable. Identical arguments produce identical trees.
pub fn generate_tree(
    seed: u64,
    depth: usize,
    branching: usize,
    n_options: usize,
) -> Result<ReasoningTree> {
    if depth < 1 {
        return Err(Error::InvalidConfig("depth must be >= 1".into()));
    }
    if branching < 2 {
        return Err(Error::InvalidConfig("branching must be >= 2".into()));
    }
    if n_options < 2 {
        return Err(Error::InvalidConfig("n_options must be >= 2".into()));
    }
    let n_leaves = checked_leaf_count(depth, branching)? as usize;
    if n_options > n_leaves {
        return Err(Error::InvalidConfig(format!(
            "{n_options} options cannot be covered by {n_leaves} leaves"
        )));
    }

    let mut rng = RngStream::from_seed(seed).rng();
    let faithful_path: Vec<usize> = (0..depth).map(|_| rng.random_range(0..branching)).collect();
    let correct_option = rng.random_range(0..n_options);

    let mut leaf_option_map: Vec<usize> =
        (0..n_leaves).map(|_| rng.random_range(0..n_options)).collect();
    let faithful_leaf = faithful_path.iter().fold(0, |acc, &a| acc * branching + a);
    leaf_option_map[faithful_leaf] = correct_option;

    // Coverage post-pass: steal leaves from over-represented options.
    let mut counts = vec![0usize; n_options];
    for &o in &leaf_option_map {
        counts[o] += 1;
    }
    let mut scan_order: Vec<usize> = (0..n_leaves).filter(|&l| l != faithful_leaf).collect();
    for i in (1..scan_order.len()).rev() {
        let j = rng.random_range(0..=i);
        scan_order.swap(i, j);
    }
    for missing in 0..n_options {
        if counts[missing] > 0 {
            continue;
        }
        let donor = scan_order
            .iter()
            .copied()
            .find(|&l| counts[leaf_option_map[l]] >= 2)
            .expect("pigeonhole: a duplicated option always exists while one is missing");
        counts[leaf_option_map[donor]] -= 1;
        leaf_option_map[donor] = missing;
        counts[missing] += 1;
    }

    let tree = ReasoningTree { depth, branching, n_options, leaf_option_map, faithful_path, seed };
    tree.validate()?;
    Ok(tree)
}

/// All B^D complete action sequences in lexicographic order.
pub fn enumerate_trajectories(tree: &ReasoningTree, cap: u64) -> Result<Vec<Vec<usize>>> {
    let paths = (tree.branching as u64)
        .checked_pow(tree.depth as u32)
        .ok_or(Error::EnumerationInfeasible { paths: u64::MAX, cap })?;
    if paths > cap {
        return Err(Error::EnumerationInfeasible { paths, cap });
    }
    let mut out = Vec::with_capacity(paths as usize);
    let mut current = vec![0usize; tree.depth];
    loop {
        out.push(current.clone());
        // Odometer increment in base B.
        let mut pos = tree.depth;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            current[pos] += 1;
            if current[pos] < tree.branching {
                break;
            }
            current[pos] = 0;
        }
    }
}

/// Exact probability of a complete path under the policy: the product of
/// per-step softmax probabilities conditioned on `observation`.
pub fn trajectory_probability(
    tree: &ReasoningTree,
    policy: &Policy,
    observation: &[f64],
    actions: &[usize],
) -> Result<f64> {
    tree.validate_path(actions)?;
    let mut prob = 1.0;
    for t in 0..actions.len() {
        let node = tree.node_at(&actions[..t]);
        let dist = policy.action_distribution(node, observation);
        prob *= dist[actions[t]];
    }
    Ok(prob)
}
