use rand::Rng;
use rand_distr::StandardNormal;

use super::config::PlanningMethod;
use crate::diffcore::{ParamStore, Tensor};
use crate::envs::{preprocess, Env, EpisodeRecord};
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::planner::{cem_plan, random_shooting, LatentPlanningModel, PlannerConfig, StateBelief};
use crate::rng::{normals, RngStreams};

/// Action selection during collection or evaluation.
#[derive(Clone, Copy)]
pub enum Policy<'a> {
    /// Uniform actions within the bounds.
    Random,
    /// Filter the observation stream with the learned model and replan at
    /// every agent step.
    Planned {
        model: &'a ModelConfig,
        params: &'a ParamStore<f32>,
        planner: &'a PlannerConfig,
        method: PlanningMethod,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollectStats {
    pub planner_calls: usize,
    /// Image decodes made while planning (stays 0: planning is latent-only).
    pub observation_decodes: usize,
    pub total_reward: f64,
}

/// Runs one episode of `⌈T/R⌉` agent steps. Each planned action gets
/// `N(0, noise_std²)` noise per dimension and is then clamped to the bounds;
/// it is applied `repeat` times (fewer on a short final step) and the
/// rewards are summed. Randomness comes from named streams of `streams`.
pub fn collect_episode(
    env: &mut dyn Env,
    policy: &Policy,
    repeat: usize,
    noise_std: f64,
    streams: &RngStreams,
) -> Result<(EpisodeRecord, CollectStats)> {
    if repeat == 0 {
        return Err(Error::config("action repeat must be >= 1"));
    }
    let spec = env.spec().clone();
    let (a_dim, (low, high)) = (spec.action_dim, (spec.action_low, spec.action_high));
    let mut reset_rng = streams.stream("reset", 0);
    let mut act_rng = streams.stream("action", 0);
    let mut plan_rng = streams.stream("plan", 0);
    let mut noise_rng = streams.stream("explore", 0);
    let mut belief_rng = streams.stream("belief", 0);
    env.reset(&mut reset_rng);

    let steps = spec.episode_len.div_ceil(repeat);
    let mut observations = env.render();
    let mut states: Vec<f32> = env.true_state().iter().map(|&v| v as f32).collect();
    let mut actions = Vec::with_capacity(steps * a_dim);
    let mut rewards = Vec::with_capacity(steps);
    let mut stats = CollectStats::default();

    let mut filter_state = match policy {
        Policy::Planned { model, .. } => Some(StateBelief::zero_state(model)),
        Policy::Random => None,
    };
    let mut prev_action = vec![0.0f32; a_dim];
    let size = spec.image_size;

    for t in 0..steps {
        let action: Vec<f64> = match policy {
            Policy::Random => (0..a_dim).map(|_| act_rng.random_range(low..high)).collect(),
            Policy::Planned { model, params, planner, method } => {
                let frame = &observations[observations.len() - size * size * 3..];
                let image = Tensor::new(&[1, size, size, 3], preprocess::<f32>(frame))?;
                let prev = filter_state.as_ref().expect("planned policy has a filter state");
                let belief = StateBelief::observe(model, params, prev, &prev_action, &image)?;
                let scorer = LatentPlanningModel::new(model, params, belief.clone());
                let planned = match method {
                    PlanningMethod::Cem => cem_plan(&scorer, planner, &mut plan_rng)?,
                    PlanningMethod::Shooting => random_shooting(&scorer, planner, &mut plan_rng)?,
                };
                stats.planner_calls += 1;
                stats.observation_decodes += scorer.observation_decodes();
                // Commit to one posterior sample for the next filter step.
                let eps: Vec<f32> = normals(&mut belief_rng, model.stoch_dim());
                filter_state = Some(belief.sample(&eps)?);
                planned
                    .iter()
                    .map(|&a| {
                        let e: f64 = noise_rng.sample(StandardNormal);
                        (a + noise_std * e).clamp(low, high)
                    })
                    .collect()
            }
        };
        let n_physics = repeat.min(spec.episode_len - t * repeat);
        let mut reward = 0.0;
        for _ in 0..n_physics {
            reward += env.step(&action);
        }
        stats.total_reward += reward;
        prev_action = action.iter().map(|&a| a as f32).collect();
        actions.extend_from_slice(&prev_action);
        rewards.push(reward as f32);
        observations.extend(env.render());
        states.extend(env.true_state().iter().map(|&v| v as f32));
    }

    let record = EpisodeRecord {
        env: spec.name.clone(),
        episode_len: spec.episode_len,
        repeat,
        seed: streams.root(),
        image_size: size,
        channels: 3,
        action_dim: a_dim,
        state_dim: spec.state_dim,
        observations,
        actions,
        rewards,
        states,
    };
    record.validate()?;
    Ok((record, stats))
}
