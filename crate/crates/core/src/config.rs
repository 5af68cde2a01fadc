//! Run configuration: one TOML document with [env], [policy], [sampler],
//! [rewards], [estimator] and [trainer] sections, plus `--set section.key=value`
//! overrides applied to the parsed document before deserialization.

use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;
use crate::rewards::RewardConfig;
use crate::sampler::SamplerConfig;
use serde::{Deserialize, Serialize};

fn default_n_tasks() -> usize {
    16
}
fn default_depth() -> usize {
    3
}
fn default_branching() -> usize {
    3
}
fn default_n_options() -> usize {
    4
}
fn default_signal_scale() -> f64 {
    1.0
}
fn default_evidence_density() -> f64 {
    1.0
}
fn default_obs_clutter() -> f64 {
    0.5
}
fn default_enumeration_cap() -> u64 {
    crate::tree_env::DEFAULT_ENUMERATION_CAP
}

/// Task-set generation parameters. The observation carries one block of
/// `branching` coordinates per decision node; blocks of nodes on the
/// faithful path hold the evidence for that node's faithful action, all
/// other blocks are pure clutter. Off-path reasoning states therefore have
/// nothing to decode, which is what makes their continuations entropic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_tasks: usize,
    pub depth: usize,
    pub branching: usize,
    pub n_options: usize,
    pub signal_scale: f64,
    /// Probability that a faithful-path node actually carries its evidence
    /// spike; below 1.0 some reasoning steps are unreadable and must be
    /// guessed, which is where lucky trajectories live.
    pub evidence_density: f64,
    pub obs_clutter: f64,
    pub enumeration_cap: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_tasks: default_n_tasks(),
            depth: default_depth(),
            branching: default_branching(),
            n_options: default_n_options(),
            signal_scale: default_signal_scale(),
            evidence_density: default_evidence_density(),
            obs_clutter: default_obs_clutter(),
            enumeration_cap: default_enumeration_cap(),
        }
    }
}

impl EnvConfig {
    pub fn n_internal_nodes(&self) -> usize {
        (self.branching.pow(self.depth as u32) - 1) / (self.branching - 1)
    }

    pub fn obs_dim(&self) -> usize {
        self.n_internal_nodes() * self.branching
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks < 1 {
            return Err(Error::InvalidConfig("env.n_tasks: must be >= 1".into()));
        }
        if self.depth < 1 {
            return Err(Error::InvalidConfig("env.depth: must be >= 1".into()));
        }
        if self.branching < 2 {
            return Err(Error::InvalidConfig("env.branching: must be >= 2".into()));
        }
        if self.n_options < 2 {
            return Err(Error::InvalidConfig("env.n_options: must be >= 2".into()));
        }
        if self.signal_scale < 0.0 || !self.signal_scale.is_finite() {
            return Err(Error::InvalidConfig("env.signal_scale: must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.evidence_density) {
            return Err(Error::InvalidConfig("env.evidence_density: must lie in [0, 1]".into()));
        }
        if self.obs_clutter < 0.0 || !self.obs_clutter.is_finite() {
            return Err(Error::InvalidConfig("env.obs_clutter: must be finite and >= 0".into()));
        }
        if self.enumeration_cap < 1 {
            return Err(Error::InvalidConfig("env.enumeration_cap: must be >= 1".into()));
        }
        Ok(())
    }
}

fn default_temperature() -> f64 {
    1.0
}
fn default_init_std() -> f64 {
    0.1
}

/// Initial-policy parameters. `evidence_gain` is the pretrained-competence
/// analog: each node's weights start with `gain` on its level's evidence
/// block, so the initial policy already tends to read the observation the
/// way a pretrained model already reasons. 0 gives the bare Gaussian init.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub temperature: f64,
    pub init_std: f64,
    pub evidence_gain: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            init_std: default_init_std(),
            evidence_gain: 0.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("policy.temperature: must be > 0".into()));
        }
        if self.init_std < 0.0 || !self.init_std.is_finite() {
            return Err(Error::InvalidConfig("policy.init_std: must be finite and >= 0".into()));
        }
        if self.evidence_gain < 0.0 || !self.evidence_gain.is_finite() {
            return Err(Error::InvalidConfig("policy.evidence_gain: must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

fn default_learning_rate() -> f64 {
    1e-2
}
fn default_total_steps() -> usize {
    400
}
fn default_num_workers() -> usize {
    1
}

/// Training-loop parameters. `batch_size` defaults to the full task set and
/// `samples_per_prompt` to the estimator's convention (16 for group-based
/// estimators, 1 for plain REINFORCE++); both are filled in by `resolve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_prompt: Option<usize>,
    pub total_steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub scs_enabled: bool,
    pub num_workers: usize,
    /// Steps between periodic checkpoints; 0 disables them.
    pub checkpoint_interval: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            batch_size: None,
            samples_per_prompt: None,
            total_steps: default_total_steps(),
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            scs_enabled: true,
            num_workers: default_num_workers(),
            checkpoint_interval: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("trainer.learning_rate: must be finite and >= 0".into()));
        }
        if self.total_steps < 1 {
            return Err(Error::InvalidConfig("trainer.total_steps: must be >= 1".into()));
        }
        if self.num_workers < 1 {
            return Err(Error::InvalidConfig("trainer.num_workers: must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("trainer.batch_size: must be >= 1".into()));
        }
        if self.samples_per_prompt == Some(0) {
            return Err(Error::InvalidConfig("trainer.samples_per_prompt: must be >= 1".into()));
        }
        Ok(())
    }
}

/// The full run document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub sampler: SamplerConfig,
    pub rewards: RewardConfig,
    pub estimator: EstimatorConfig,
    pub trainer: TrainerConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    /// Parses a TOML document, applies `--set` overrides, resolves defaults
    /// and validates the result.
    pub fn load(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        for entry in overrides {
            apply_override(&mut doc, entry)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills in defaults that depend on other fields.
    pub fn resolve(&mut self) {
        if self.trainer.batch_size.is_none() {
            self.trainer.batch_size = Some(self.env.n_tasks);
        }
        if self.trainer.samples_per_prompt.is_none() {
            self.trainer.samples_per_prompt =
                Some(self.estimator.algorithm.default_samples_per_prompt());
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.policy.validate()?;
        self.sampler.validate()?;
        self.rewards.validate()?;
        self.estimator.validate()?;
        self.trainer.validate()?;
        if let Some(k) = self.trainer.samples_per_prompt {
            if k < 2 && self.estimator.algorithm.needs_group() {
                return Err(Error::InvalidConfig(format!(
                    "trainer.samples_per_prompt: {} needs at least 2 rollouts per task, got {k}",
                    self.estimator.algorithm.tag()
                )));
            }
        }
        if let Some(b) = self.trainer.batch_size {
            if b > self.env.n_tasks {
                return Err(Error::InvalidConfig(format!(
                    "trainer.batch_size: {b} exceeds env.n_tasks = {}",
                    self.env.n_tasks
                )));
            }
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.trainer.batch_size.unwrap_or(self.env.n_tasks)
    }

    pub fn samples_per_prompt(&self) -> usize {
        self.trainer
            .samples_per_prompt
            .unwrap_or_else(|| self.estimator.algorithm.default_samples_per_prompt())
    }
}

/// Applies one `section.key=value` override. Values parse as TOML; bare words
/// fall back to strings.
fn apply_override(doc: &mut toml::Table, entry: &str) -> Result<()> {
    let (path, raw_value) = entry
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override '{entry}' is not key=value")))?;
    let value = parse_toml_value(raw_value.trim())?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidConfig(format!("override '{entry}' has an empty key path")));
    }
    let mut table = doc;
    for segment in &segments[..segments.len() - 1] {
        table = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::InvalidConfig(format!("override '{entry}': '{segment}' is not a table"))
            })?;
    }
    table.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

fn parse_toml_value(raw: &str) -> Result<toml::Value> {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => Ok(t.remove("v").expect("key v present")),
        Err(_) => Ok(toml::Value::String(raw.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Algorithm;

    #[test]
    fn defaults_resolve_and_validate() {
        let mut cfg = RunConfig::default();
        cfg.resolve();
        cfg.validate().unwrap();
        assert_eq!(cfg.batch_size(), 16);
        assert_eq!(cfg.samples_per_prompt(), 16);
        assert_eq!(cfg.env.obs_dim(), 9);
    }

    #[test]
    fn reinforce_pp_defaults_to_single_sample() {
        let cfg = RunConfig::load("[estimator]\nalgorithm = \"reinforce_pp\"\n", &[]).unwrap();
        assert_eq!(cfg.samples_per_prompt(), 1);
        assert_eq!(cfg.estimator.algorithm, Algorithm::ReinforcePp);
    }

    #[test]
    fn overrides_are_toml_typed() {
        let cfg = RunConfig::load(
            "[trainer]\nseed = 1\n",
            &[
                "trainer.seed=42".into(),
                "trainer.learning_rate=0.05".into(),
                "estimator.algorithm=grpo".into(),
                "trainer.scs_enabled=false".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.trainer.seed, 42);
        assert!((cfg.trainer.learning_rate - 0.05).abs() < 1e-15);
        assert_eq!(cfg.estimator.algorithm, Algorithm::Grpo);
        assert!(!cfg.trainer.scs_enabled);
    }

    #[test]
    fn invalid_fields_report_paths() {
        let err = RunConfig::load("[sampler]\ntruncation_ratio = 1.5\n", &[]).unwrap_err();
        assert!(err.to_string().contains("sampler.truncation_ratio"), "{err}");

        let err = RunConfig::load("[env]\nbranching = 1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("env.branching"), "{err}");

        let err =
            RunConfig::load("", &["trainer.samples_per_prompt=1".into()]).unwrap_err();
        assert!(err.to_string().contains("samples_per_prompt"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::load("[trainer]\nlearningrate = 2\n", &[]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.resolve();
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
