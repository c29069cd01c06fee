//! Built-in pixel environments, observation preprocessing, the
//! linear-Gaussian simulator, and episode files.

mod episode;
mod goal;
mod lingauss;
mod pendulum;
mod render;

pub use episode::{read_episode, write_episode, EpisodeRecord};
pub use goal::{goal_reward, render_goal, sparse_goal_step, GoalState, SparseGoal, GOAL_RADIUS};
pub use lingauss::{lingauss_episode, LinGaussEpisode, LinGaussSpec};
pub(crate) use lingauss::sample_gaussian;
pub use pendulum::{
    pendulum_energy, pendulum_reward, pendulum_step, pendulum_step_with, render_pendulum, wrap_angle, Pendulum,
    PendulumState,
};

use serde::{Deserialize, Serialize};

use crate::diffcore::Real;
use crate::error::{Error, Result};
use crate::planner::PlanningModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub action_dim: usize,
    pub action_low: f64,
    pub action_high: f64,
    /// Physics steps per episode (before action repeat).
    pub episode_len: usize,
    pub dt: f64,
    pub image_size: usize,
    /// Length of the ground-truth state vector.
    pub state_dim: usize,
}

/// A deterministic environment with pixel observations. Rewards lie in [0, 1].
pub trait Env {
    fn spec(&self) -> &EnvSpec;
    /// Samples a start state (and any per-episode task parameters).
    fn reset(&mut self, rng: &mut dyn rand::RngCore);
    /// One physics step; returns the reward.
    fn step(&mut self, action: &[f64]) -> f64;
    /// `size × size × 3` bytes, a pure function of the state.
    fn render(&self) -> Vec<u8>;
    fn true_state(&self) -> Vec<f64>;
    fn box_clone(&self) -> Box<dyn Env>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    pub image_size: usize,
    pub episode_len: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: "pendulum".into(),
            image_size: 32,
            episode_len: 200,
        }
    }
}

pub fn make_env(cfg: &EnvConfig) -> Result<Box<dyn Env>> {
    if cfg.image_size < 4 || cfg.episode_len == 0 {
        return Err(Error::config("env needs image_size >= 4 and episode_len >= 1"));
    }
    match cfg.name.as_str() {
        "pendulum" => Ok(Box::new(Pendulum::new(cfg.image_size, cfg.episode_len))),
        "goal" => Ok(Box::new(SparseGoal::new(cfg.image_size, cfg.episode_len))),
        other => Err(Error::config(format!("unknown env `{other}` (pendulum|goal)"))),
    }
}

/// Bit-depth reduction to 5 bits and centring: `floor(p / 8) / 32 − 0.5`.
pub fn preprocess<T: Real>(pixels: &[u8]) -> Vec<T> {
    pixels
        .iter()
        .map(|&p| T::c((p >> 3) as f64 / 32.0 - 0.5))
        .collect()
}

/// Maps model-space values back to bytes (inverse of [`preprocess`] on its range).
pub fn to_pixels<T: Real>(values: &[T]) -> Vec<u8> {
    values
        .iter()
        .map(|v| ((v.f64() + 0.5) * 256.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Scores candidates with the real simulator, applying each action
/// `repeat` times and summing the rewards.
pub struct TrueDynamics {
    env: Box<dyn Env>,
    repeat: usize,
}

impl TrueDynamics {
    /// Snapshot of `env`'s current state.
    pub fn new(env: &dyn Env, repeat: usize) -> Self {
        Self {
            env: env.box_clone(),
            repeat: repeat.max(1),
        }
    }
}

impl PlanningModel for TrueDynamics {
    fn action_dim(&self) -> usize {
        self.env.spec().action_dim
    }

    fn noise_dim(&self) -> usize {
        0
    }

    fn returns(&self, actions: &[f64], candidates: usize, steps: usize, _noise: &[f64]) -> Result<Vec<f64>> {
        let a = self.action_dim();
        Ok((0..candidates)
            .map(|c| {
                let mut env = self.env.box_clone();
                let mut total = 0.0;
                for t in 0..steps {
                    let act = &actions[(c * steps + t) * a..(c * steps + t + 1) * a];
                    for _ in 0..self.repeat {
                        total += env.step(act);
                    }
                }
                total
            })
            .collect())
    }
}
