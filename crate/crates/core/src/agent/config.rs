use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{make_env, EnvConfig};
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::objectives::ObjectiveConfig;
use crate::planner::PlannerConfig;

/// How episodes after the seed episodes are collected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collection {
    Planned,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanningMethod {
    Cem,
    Shooting,
}

impl FromStr for Collection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planned" => Ok(Self::Planned),
            "random" => Ok(Self::Random),
            _ => Err(Error::config(format!("unknown collection `{s}` (planned|random)"))),
        }
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Planned => "planned",
            Self::Random => "random",
        })
    }
}

impl FromStr for PlanningMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cem" => Ok(Self::Cem),
            "shooting" => Ok(Self::Shooting),
            _ => Err(Error::config(format!("unknown planning method `{s}` (cem|shooting)"))),
        }
    }
}

impl fmt::Display for PlanningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cem => "cem",
            Self::Shooting => "shooting",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub planner: PlannerConfig,
    /// R
    pub action_repeat: usize,
    /// S
    pub seed_episodes: usize,
    /// C: update steps between collected episodes.
    pub collect_interval: usize,
    /// B
    pub batch_size: usize,
    /// L
    pub chunk_len: usize,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub grad_clip: f64,
    /// Std of the Gaussian exploration noise added while collecting.
    pub exploration_noise: f64,
    /// Episode budget including the seed episodes.
    pub total_episodes: usize,
    pub collection: Collection,
    pub planning: PlanningMethod,
    /// Write a checkpoint every this many collected episodes (0: final only).
    pub checkpoint_every: usize,
    /// Run a test evaluation every this many collected episodes (0: final only).
    pub test_every: usize,
    pub test_episodes: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            objective: ObjectiveConfig::default(),
            planner: PlannerConfig::default(),
            action_repeat: 2,
            seed_episodes: 5,
            collect_interval: 100,
            batch_size: 50,
            chunk_len: 50,
            learning_rate: 1e-3,
            adam_epsilon: 1e-4,
            grad_clip: 1000.0,
            exploration_noise: 0.3,
            total_episodes: 105,
            collection: Collection::Planned,
            planning: PlanningMethod::Cem,
            checkpoint_every: 10,
            test_every: 10,
            test_episodes: 10,
        }
    }
}

impl AgentConfig {
    /// Agent steps per episode, `⌈T / R⌉`.
    pub fn episode_steps(&self) -> usize {
        self.env.episode_len.div_ceil(self.action_repeat.max(1))
    }

    /// Copies the environment's image size, action size and action bounds
    /// into the model and planner sections, then validates everything.
    pub fn resolve(mut self) -> Result<Self> {
        let env = make_env(&self.env)?;
        let spec = env.spec();
        self.model.image_size = spec.image_size;
        self.model.action_dim = spec.action_dim;
        self.planner.action_low = vec![spec.action_low; spec.action_dim];
        self.planner.action_high = vec![spec.action_high; spec.action_dim];
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.action_repeat == 0 || self.seed_episodes == 0 || self.collect_interval == 0 || self.batch_size == 0 {
            return bad("action_repeat, seed_episodes, collect_interval and batch_size must be >= 1".into());
        }
        if self.total_episodes < self.seed_episodes {
            return bad(format!(
                "total_episodes ({}) must be >= seed_episodes ({})",
                self.total_episodes, self.seed_episodes
            ));
        }
        if self.chunk_len > self.episode_steps() {
            return bad(format!(
                "chunk_len {} exceeds the {} agent steps per episode",
                self.chunk_len,
                self.episode_steps()
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_epsilon > 0.0) || !(self.grad_clip > 0.0) {
            return bad("learning_rate, adam_epsilon and grad_clip must be positive".into());
        }
        if !(self.exploration_noise >= 0.0) {
            return bad("exploration_noise must be >= 0".into());
        }
        if self.test_episodes == 0 {
            return bad("test_episodes must be >= 1".into());
        }
        self.model.validate()?;
        self.objective.validate(self.chunk_len)?;
        self.planner.validate(self.model.action_dim)?;
        Ok(())
    }

    /// Short SHA-256 of the canonical JSON form, recorded in every CSV.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
