//! Training objectives: one-step bound, fixed-distance bound and latent
//! overshooting, with free-nats clipping.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::distributions::unit_log_prob_rows;
use crate::error::{Error, Result};
use crate::models::{divergence, filter_sequence, stack_states, Belief, FilterOutput, LatentVar, SequenceModel};
use crate::rng::normals;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Standard,
    Dstep,
    Overshooting,
}

impl FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "dstep" => Ok(Self::Dstep),
            "overshooting" => Ok(Self::Overshooting),
            _ => Err(Error::config(format!(
                "unknown objective `{s}` (standard|dstep|overshooting)"
            ))),
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Dstep => "dstep",
            Self::Overshooting => "overshooting",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// `d` for the fixed-distance bound, `D` for overshooting.
    pub distance: usize,
    /// Weight shared by all distances above one (distance one has weight 1).
    pub beta: f64,
    pub free_nats: f64,
    /// Treat the posterior as a constant in divergence terms with distance > 1.
    pub stop_posterior_grad: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Standard,
            distance: 1,
            beta: 1.0,
            free_nats: 3.0,
            stop_posterior_grad: true,
        }
    }
}

impl ObjectiveConfig {
    /// Longest prior chain the objective needs.
    pub fn max_distance(&self) -> usize {
        match self.kind {
            ObjectiveKind::Standard => 1,
            _ => self.distance,
        }
    }

    pub fn validate(&self, chunk_len: usize) -> Result<()> {
        if !(self.free_nats >= 0.0) {
            return Err(Error::config("free_nats must be >= 0"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config("beta must be >= 0"));
        }
        if chunk_len < 2 {
            return Err(Error::config("chunk length must be at least 2"));
        }
        if self.kind != ObjectiveKind::Standard && (self.distance < 1 || self.distance >= chunk_len) {
            return Err(Error::OutOfRange(format!(
                "distance {} must be in 1..{chunk_len} (chunk length)",
                self.distance
            )));
        }
        Ok(())
    }
}

/// Time-major batch of `steps` × `batch` chunk rows.
///
/// Row `t * batch + b` holds observation `t` of chunk `b`, the action taken
/// just before it and the reward received on arriving at it.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch<T> {
    pub obs: Tensor<T>,
    pub actions: Tensor<T>,
    pub rewards: Tensor<T>,
    pub steps: usize,
    pub batch: usize,
}

impl<T: Real> SeqBatch<T> {
    pub fn new(obs: Tensor<T>, actions: Tensor<T>, rewards: Tensor<T>, steps: usize, batch: usize) -> Result<Self> {
        let n = steps * batch;
        if obs.shape().len() != 4 || obs.rows() != n || actions.rows() != n || rewards.rows() != n || rewards.row_len() != 1 {
            return Err(Error::dim(format!(
                "batch of {steps}x{batch} rows: obs {:?}, actions {:?}, rewards {:?}",
                obs.shape(),
                actions.shape(),
                rewards.shape()
            )));
        }
        Ok(Self {
            obs,
            actions,
            rewards,
            steps,
            batch,
        })
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }

    pub fn cast<U: Real>(&self) -> SeqBatch<U> {
        SeqBatch {
            obs: self.obs.cast(),
            actions: self.actions.cast(),
            rewards: self.rewards.cast(),
            steps: self.steps,
            batch: self.batch,
        }
    }
}

/// Reparameterization noise for one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossNoise<T> {
    /// `[steps * batch, noise_dim]` for posterior samples.
    pub filter: Tensor<T>,
    /// `[(max_distance − 1) * steps * batch, noise_dim]` for intermediate
    /// prior samples along overshooting chains; block `j` serves chain step `j + 1`.
    pub chain: Tensor<T>,
}

impl<T: Real> LossNoise<T> {
    pub fn sample(rng: &mut impl Rng, steps: usize, batch: usize, noise_dim: usize, max_distance: usize) -> Self {
        let n = steps * batch;
        let c = max_distance.saturating_sub(1) * n;
        Self {
            filter: Tensor::new(&[n, noise_dim], normals(rng, n * noise_dim)).expect("shape"),
            chain: Tensor::new(&[c, noise_dim], normals(rng, c * noise_dim)).expect("shape"),
        }
    }

    pub fn cast<U: Real>(&self) -> LossNoise<U> {
        LossNoise {
            filter: self.filter.cast(),
            chain: self.chain.cast(),
        }
    }
}

/// Scalar loss terms, averaged over batch rows and time steps.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub reward: f64,
    /// After free-nats clipping and distance weighting.
    pub divergence: f64,
    pub total: f64,
}

/// The loss as graph nodes, with intermediate results exposed for tests
/// and diagnostics.
#[derive(Clone, Debug)]
pub struct LossGraph {
    pub total: Var,
    pub reconstruction: Var,
    pub reward: Var,
    pub divergence: Var,
    /// Divergence term of each chain distance 1..=D, already normalized by
    /// steps × batch (empty for the standard objective).
    pub per_distance: Vec<Var>,
    pub filter: FilterOutput,
}

impl LossGraph {
    pub fn breakdown<T: Real>(&self, g: &Graph<T>) -> Result<LossBreakdown> {
        let b = LossBreakdown {
            reconstruction: g.item(self.reconstruction).f64(),
            reward: g.item(self.reward).f64(),
            divergence: g.item(self.divergence).f64(),
            total: g.item(self.total).f64(),
        };
        for (name, v) in [
            ("reconstruction", b.reconstruction),
            ("reward", b.reward),
            ("divergence", b.divergence),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} term is {v}")));
            }
        }
        Ok(b)
    }
}

/// `max(kl, F)` row-wise: gradient passes only where `kl > F`.
pub fn apply_free_nats<T: Real>(g: &Graph<T>, kl: Var, free_nats: f64) -> Var {
    g.max_scalar(kl, free_nats)
}

/// Plain-value form of [`apply_free_nats`].
pub fn free_nats(kl: f64, f: f64) -> f64 {
    kl.max(f)
}

fn stack_beliefs<T: Real>(g: &Graph<T>, beliefs: &[Belief]) -> Belief {
    let means: Vec<Var> = beliefs.iter().map(|b| b.mean).collect();
    let stds: Option<Vec<Var>> = beliefs.iter().map(|b| b.std).collect();
    let cat = |v: Vec<Var>| if v.len() == 1 { v[0] } else { g.concat_rows(&v) };
    Belief {
        mean: cat(means),
        std: stds.map(cat),
    }
}

fn check_noise<T: Real, M: SequenceModel<T>>(m: &M, batch: &SeqBatch<T>, noise: &LossNoise<T>, max_d: usize) -> Result<()> {
    let n = batch.rows();
    let nd = m.noise_dim();
    if nd == 0 {
        return Ok(());
    }
    if noise.filter.shape() != [n, nd] {
        return Err(Error::dim(format!(
            "filter noise: expected [{n}, {nd}], got {:?}",
            noise.filter.shape()
        )));
    }
    let need = max_d.saturating_sub(1) * n;
    if noise.chain.rows() < need || (need > 0 && noise.chain.row_len() != nd) {
        return Err(Error::dim(format!(
            "chain noise: need [{need}, {nd}], got {:?}",
            noise.chain.shape()
        )));
    }
    Ok(())
}

/// Builds the loss selected by `cfg`.
pub fn loss_graph<T: Real, M: SequenceModel<T>>(
    m: &M,
    batch: &SeqBatch<T>,
    noise: &LossNoise<T>,
    cfg: &ObjectiveConfig,
) -> Result<LossGraph> {
    cfg.validate(batch.steps)?;
    let max_d = cfg.max_distance();
    check_noise(m, batch, noise, max_d)?;
    let g = m.graph();
    let (l, b) = (batch.steps, batch.batch);
    let n = (l * b) as f64;

    let embeds = m.embed(g.input(batch.obs.clone()))?;
    let actions = g.input(batch.actions.clone());
    let filter_noise = (m.noise_dim() > 0).then(|| g.input(noise.filter.clone()));
    let init = m.initial_state(b);
    let filter = filter_sequence(m, &init, embeds, actions, filter_noise, l)?;

    // Reconstruction terms under posterior samples.
    let states = stack_states(g, &filter.states)?;
    let obs_mean = m.decode_observation(&states)?;
    let d = batch.obs.row_len();
    let obs_target = g.input(batch.obs.clone().reshape(&[l * b, d])?);
    let reconstruction = g.scale(g.sum(unit_log_prob_rows(g, g.reshape(obs_mean, &[l * b, d]), obs_target)), 1.0 / n);
    let reward_mean = m.decode_reward(&states)?;
    let reward = g.scale(
        g.sum(unit_log_prob_rows(g, reward_mean, g.input(batch.rewards.clone()))),
        1.0 / n,
    );

    let mut per_distance = Vec::new();
    let divergence_term = match cfg.kind {
        ObjectiveKind::Standard => {
            let post = stack_beliefs(g, &filter.posteriors);
            let prior = stack_beliefs(g, &filter.priors);
            let kl = apply_free_nats(g, divergence(g, &post, &prior), cfg.free_nats);
            g.scale(g.sum(kl), 1.0 / n)
        }
        ObjectiveKind::Dstep => {
            per_distance = chain_divergences(m, &filter, &init, actions, noise, l, b, cfg.distance, cfg)?;
            *per_distance.last().expect("distance >= 1")
        }
        ObjectiveKind::Overshooting => {
            per_distance = chain_divergences(m, &filter, &init, actions, noise, l, b, cfg.distance, cfg)?;
            let weighted: Vec<Var> = per_distance
                .iter()
                .enumerate()
                .map(|(i, &v)| if i == 0 { v } else { g.scale(v, cfg.beta) })
                .collect();
            let sum = weighted[1..].iter().fold(weighted[0], |acc, &v| g.add(acc, v));
            g.scale(sum, 1.0 / cfg.distance as f64)
        }
    };
    let total = g.sub(divergence_term, g.add(reconstruction, reward));
    Ok(LossGraph {
        total,
        reconstruction,
        reward,
        divergence: divergence_term,
        per_distance,
        filter,
    })
}

/// Divergence terms for distances `1..=max_d`, each averaged over all
/// `steps × batch` rows (targets closer than `d − 1` to the chunk start
/// contribute nothing at distance `d`).
///
/// Chains start from the initial state and from every posterior sample but
/// the last; all start points advance together, shrinking by one block per
/// step.
#[allow(clippy::too_many_arguments)]
fn chain_divergences<T: Real, M: SequenceModel<T>>(
    m: &M,
    filter: &FilterOutput,
    init: &LatentVar,
    actions: Var,
    noise: &LossNoise<T>,
    l: usize,
    b: usize,
    max_d: usize,
    cfg: &ObjectiveConfig,
) -> Result<Vec<Var>> {
    let g = m.graph();
    let n = (l * b) as f64;
    let mut starts = vec![*init];
    starts.extend_from_slice(&filter.states[..l - 1]);
    let mut cur = stack_states(g, &starts)?;
    let posts = stack_beliefs(g, &filter.posteriors);
    let chain_noise = (m.noise_dim() > 0 && max_d > 1).then(|| g.input(noise.chain.clone()));
    let mut out = Vec::with_capacity(max_d);
    for j in 1..=max_d {
        let rows = (l - j + 1) * b;
        let a = g.slice_rows(actions, (j - 1) * b, l * b);
        let tr = m.prior_step(&cur, a)?;
        let mut target = posts.slice_rows(g, (j - 1) * b, l * b);
        if j > 1 && cfg.stop_posterior_grad {
            target = target.stop_gradient(g);
        }
        let kl = apply_free_nats(g, divergence(g, &target, &tr.prior), cfg.free_nats);
        out.push(g.scale(g.sum(kl), 1.0 / n));
        if j < max_d {
            let keep = rows - b;
            let tr_kept = crate::models::Transition {
                h: tr.h.map(|h| g.slice_rows(h, 0, keep)),
                prior: tr.prior.slice_rows(g, 0, keep),
            };
            let eps = chain_noise.map(|z| g.slice_rows(z, (j - 1) * l * b, (j - 1) * l * b + keep));
            cur = m.commit(&tr_kept, &tr_kept.prior, eps)?;
        }
    }
    Ok(out)
}

pub fn standard_loss<T: Real, M: SequenceModel<T>>(
    m: &M,
    batch: &SeqBatch<T>,
    noise: &LossNoise<T>,
    free_nats: f64,
) -> Result<LossGraph> {
    let cfg = ObjectiveConfig {
        free_nats,
        ..Default::default()
    };
    loss_graph(m, batch, noise, &cfg)
}

pub fn dstep_loss<T: Real, M: SequenceModel<T>>(
    m: &M,
    batch: &SeqBatch<T>,
    d: usize,
    noise: &LossNoise<T>,
    free_nats: f64,
    stop_posterior_grad: bool,
) -> Result<LossGraph> {
    let cfg = ObjectiveConfig {
        kind: ObjectiveKind::Dstep,
        distance: d,
        free_nats,
        stop_posterior_grad,
        ..Default::default()
    };
    loss_graph(m, batch, noise, &cfg)
}

pub fn overshooting_loss<T: Real, M: SequenceModel<T>>(
    m: &M,
    batch: &SeqBatch<T>,
    cfg: &ObjectiveConfig,
    noise: &LossNoise<T>,
) -> Result<LossGraph> {
    let cfg = ObjectiveConfig {
        kind: ObjectiveKind::Overshooting,
        ..cfg.clone()
    };
    loss_graph(m, batch, noise, &cfg)
}
