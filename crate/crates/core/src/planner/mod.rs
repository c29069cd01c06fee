//! Cross-entropy-method planning over action sequences, and random shooting.

mod latent;

pub use latent::{LatentPlanningModel, StateBelief};

use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    /// Mean absolute deviation with a 1/(K−1) factor.
    Mad,
    /// Population standard deviation of the top candidates.
    Std,
}

impl FromStr for SigmaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mad" => Ok(Self::Mad),
            "std" => Ok(Self::Std),
            _ => Err(Error::config(format!("unknown sigma_mode `{s}` (mad|std)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Planning horizon H; sequences hold H + 1 actions.
    pub horizon: usize,
    pub iterations: usize,
    pub candidates: usize,
    pub top_k: usize,
    /// Lower action bound, one value per dimension (a single value broadcasts).
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub sigma_mode: SigmaMode,
    pub sigma_floor: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            iterations: 10,
            candidates: 1000,
            top_k: 100,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            sigma_mode: SigmaMode::Mad,
            sigma_floor: 1e-2,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self, action_dim: usize) -> Result<()> {
        if self.horizon < 1 || self.iterations < 1 {
            return Err(Error::config("planner horizon and iterations must be >= 1"));
        }
        if self.top_k < 1 || self.top_k > self.candidates {
            return Err(Error::config(format!(
                "planner needs 1 <= top_k ({}) <= candidates ({})",
                self.top_k, self.candidates
            )));
        }
        for b in [&self.action_low, &self.action_high] {
            if b.len() != 1 && b.len() != action_dim {
                return Err(Error::config(format!(
                    "action bounds have {} values for {action_dim} action dims",
                    b.len()
                )));
            }
        }
        for i in 0..action_dim {
            if !(self.low(i) < self.high(i)) {
                return Err(Error::config("action_low must be below action_high"));
            }
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::config("sigma_floor must be positive"));
        }
        Ok(())
    }

    pub fn low(&self, i: usize) -> f64 {
        self.action_low[if self.action_low.len() == 1 { 0 } else { i }]
    }

    pub fn high(&self, i: usize) -> f64 {
        self.action_high[if self.action_high.len() == 1 { 0 } else { i }]
    }

    /// Number of actions (and summed rewards) per candidate sequence.
    pub fn sequence_len(&self) -> usize {
        self.horizon + 1
    }

    pub fn clamp(&self, i: usize, a: f64) -> f64 {
        a.clamp(self.low(i), self.high(i))
    }
}

/// Anything that can score a batch of action sequences from the current
/// state belief.
pub trait PlanningModel {
    fn action_dim(&self) -> usize;
    /// Standard-normal numbers consumed per candidate and evaluated state.
    fn noise_dim(&self) -> usize;
    /// Returns of `candidates` sequences of `steps` actions each.
    ///
    /// `actions` is `[candidates][steps][action_dim]` row-major; `noise` is
    /// `[steps + 1][candidates][noise_dim]` (index 0 samples the current
    /// state, index τ + 1 the state after action τ).
    fn returns(&self, actions: &[f64], candidates: usize, steps: usize, noise: &[f64]) -> Result<Vec<f64>>;
}

/// Checked call of [`PlanningModel::returns`].
pub fn evaluate_candidates<M: PlanningModel + ?Sized>(
    model: &M,
    actions: &[f64],
    candidates: usize,
    steps: usize,
    noise: &[f64],
) -> Result<Vec<f64>> {
    let a = model.action_dim();
    if actions.len() != candidates * steps * a {
        return Err(Error::dim(format!(
            "expected {candidates}x{steps}x{a} actions, got {}",
            actions.len()
        )));
    }
    if noise.len() != (steps + 1) * candidates * model.noise_dim() {
        return Err(Error::dim("planning noise has the wrong length"));
    }
    if candidates == 0 {
        return Ok(Vec::new());
    }
    let r = model.returns(actions, candidates, steps, noise)?;
    if r.len() != candidates {
        return Err(Error::dim("model returned the wrong number of returns"));
    }
    Ok(r)
}

/// Reward given by a function of the whole (flattened) action sequence;
/// no latent state.
pub struct SequenceRewardModel<F> {
    pub action_dim: usize,
    pub reward: F,
}

impl<F: Fn(&[f64]) -> f64> PlanningModel for SequenceRewardModel<F> {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn noise_dim(&self) -> usize {
        0
    }

    fn returns(&self, actions: &[f64], candidates: usize, _steps: usize, _noise: &[f64]) -> Result<Vec<f64>> {
        let len = actions.len() / candidates;
        Ok(actions.chunks(len).map(|seq| (self.reward)(seq)).collect())
    }
}

/// Per-step reward `−Σ_i (a_i − target)²`, summed over the sequence.
pub fn quadratic_model(action_dim: usize, target: f64) -> SequenceRewardModel<impl Fn(&[f64]) -> f64> {
    SequenceRewardModel {
        action_dim,
        reward: move |seq: &[f64]| -seq.iter().map(|a| (a - target).powi(2)).sum::<f64>(),
    }
}

/// One CEM iteration as recorded by [`cem_plan_with_trace`].
#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    /// Clamped samples, `[J][H + 1][A]`.
    pub samples: Vec<f64>,
    pub returns: Vec<f64>,
    /// Selected candidates, best first.
    pub top: Vec<usize>,
    /// Belief after refitting.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanTrace {
    pub action: Vec<f64>,
    pub iterations: Vec<IterationTrace>,
}

/// Indices of the `k` best finite returns, ordered by return (descending)
/// then index (ascending).
pub fn top_k(returns: &[f64], k: usize) -> Result<Vec<usize>> {
    let mut idx: Vec<usize> = (0..returns.len()).filter(|&i| returns[i].is_finite()).collect();
    if idx.is_empty() {
        return Err(Error::NonFinite("every candidate return is non-finite".into()));
    }
    idx.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Plans with CEM and returns the first action of the final mean.
pub fn cem_plan<M: PlanningModel + ?Sized>(model: &M, cfg: &PlannerConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
    Ok(run_cem(model, cfg, rng, false)?.action)
}

/// [`cem_plan`] that also records every iteration.
pub fn cem_plan_with_trace<M: PlanningModel + ?Sized>(
    model: &M,
    cfg: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<PlanTrace> {
    run_cem(model, cfg, rng, true)
}

fn run_cem<M: PlanningModel + ?Sized>(model: &M, cfg: &PlannerConfig, rng: &mut impl Rng, trace: bool) -> Result<PlanTrace> {
    let a = model.action_dim();
    cfg.validate(a)?;
    let (j, steps) = (cfg.candidates, cfg.sequence_len());
    let width = steps * a;
    let mut mean = vec![0.0; width];
    let mut std = vec![1.0; width];
    let mut iterations = Vec::new();
    for _ in 0..cfg.iterations {
        let mut samples = vec![0.0; j * width];
        for c in 0..j {
            for i in 0..width {
                let e: f64 = rng.sample(StandardNormal);
                samples[c * width + i] = cfg.clamp(i % a, mean[i] + std[i] * e);
            }
        }
        let noise: Vec<f64> = (0..(steps + 1) * j * model.noise_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let returns = evaluate_candidates(model, &samples, j, steps, &noise)?;
        let top = top_k(&returns, cfg.top_k)?;
        let k = top.len() as f64;
        for i in 0..width {
            let m = top.iter().map(|&c| samples[c * width + i]).sum::<f64>() / k;
            let spread = match cfg.sigma_mode {
                SigmaMode::Mad if top.len() > 1 => {
                    top.iter().map(|&c| (samples[c * width + i] - m).abs()).sum::<f64>() / (k - 1.0)
                }
                SigmaMode::Mad => 0.0,
                SigmaMode::Std => (top.iter().map(|&c| (samples[c * width + i] - m).powi(2)).sum::<f64>() / k).sqrt(),
            };
            mean[i] = m;
            std[i] = spread.max(cfg.sigma_floor);
        }
        if trace {
            iterations.push(IterationTrace {
                samples,
                returns,
                top,
                mean: mean.clone(),
                std: std.clone(),
            });
        }
    }
    let action = (0..a).map(|i| cfg.clamp(i, mean[i])).collect();
    Ok(PlanTrace { action, iterations })
}

/// Best-of-`J` random sequences without refitting: the first action of the
/// highest-return candidate. Consumes the rng exactly as a one-iteration,
/// top-1 CEM run does.
pub fn random_shooting<M: PlanningModel + ?Sized>(
    model: &M,
    cfg: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let cfg = PlannerConfig {
        iterations: 1,
        top_k: 1,
        ..cfg.clone()
    };
    let t = run_cem(model, &cfg, rng, true)?;
    let it = &t.iterations[0];
    let a = model.action_dim();
    let width = cfg.sequence_len() * a;
    let best = it.top[0];
    Ok(it.samples[best * width..best * width + a].to_vec())
}

#[cfg(test)]
mod tests;
