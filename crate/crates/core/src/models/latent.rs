use std::cell::Cell;

use super::nets::{activate, dense, gru};
use super::{Family, ModelConfig};
use crate::diffcore::{Bound, Graph, Real, Tensor, Var};
use crate::distributions::{kl_rows, GaussVar};
use crate::error::{Error, Result};

/// A batch of latent states in a graph; each part is `[n, dim]` or absent.
#[derive(Clone, Copy, Debug)]
pub struct LatentVar {
    pub h: Option<Var>,
    pub s: Option<Var>,
}

/// A batch of latent states outside any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState<T> {
    pub h: Option<Tensor<T>>,
    pub s: Option<Tensor<T>>,
}

impl<T: Real> LatentState<T> {
    pub fn input(&self, g: &Graph<T>) -> LatentVar {
        LatentVar {
            h: self.h.clone().map(|t| g.input(t)),
            s: self.s.clone().map(|t| g.input(t)),
        }
    }

    pub fn read(g: &Graph<T>, v: &LatentVar) -> Self {
        Self {
            h: v.h.map(|x| g.tensor(x)),
            s: v.s.map(|x| g.tensor(x)),
        }
    }

    pub fn rows(&self) -> usize {
        self.h
            .as_ref()
            .or(self.s.as_ref())
            .map_or(0, |t| t.rows())
    }
}

/// Belief over the next latent: a Gaussian over `s`, or (rnn family) a
/// point estimate of `h` with no spread.
#[derive(Clone, Copy, Debug)]
pub struct Belief {
    pub mean: Var,
    pub std: Option<Var>,
}

impl Belief {
    pub fn gauss(&self) -> Option<GaussVar> {
        self.std.map(|std| GaussVar { mean: self.mean, std })
    }

    pub fn stop_gradient<T: Real>(&self, g: &Graph<T>) -> Self {
        Self {
            mean: g.stop_gradient(self.mean),
            std: self.std.map(|s| g.stop_gradient(s)),
        }
    }

    pub fn slice_rows<T: Real>(&self, g: &Graph<T>, start: usize, end: usize) -> Self {
        Self {
            mean: g.slice_rows(self.mean, start, end),
            std: self.std.map(|s| g.slice_rows(s, start, end)),
        }
    }
}

/// Row-wise divergence `[n, 1]` between a posterior and a prior belief:
/// closed-form KL for Gaussians, `½‖Δ‖²` for point beliefs (the KL between
/// unit-variance Gaussians centred on them).
pub fn divergence<T: Real>(g: &Graph<T>, post: &Belief, prior: &Belief) -> Var {
    match (post.gauss(), prior.gauss()) {
        (Some(q), Some(p)) => kl_rows(g, q.mean, q.std, p.mean, p.std),
        _ => g.scale(g.sum_rows(g.square(g.sub(post.mean, prior.mean))), 0.5),
    }
}

/// Output of one transition: the next deterministic activation (if the
/// family has one) and the prior belief.
#[derive(Clone, Copy, Debug)]
pub struct Transition {
    pub h: Option<Var>,
    pub prior: Belief,
}

/// Interface the objectives and planners need from a latent dynamics model.
pub trait SequenceModel<T: Real> {
    fn graph(&self) -> &Graph<T>;
    /// Size of the reparameterization noise per step and row.
    fn noise_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// `[n, H, W, C]` images to `[n, E]` embeddings.
    fn embed(&self, obs: Var) -> Result<Var>;
    fn initial_state(&self, n: usize) -> LatentVar;
    fn prior_step(&self, prev: &LatentVar, action: Var) -> Result<Transition>;
    fn posterior_step(&self, prev: &LatentVar, action: Var, tr: &Transition, embed: Var) -> Result<Belief>;
    /// Forms the state from a transition and a belief, sampling with `noise`
    /// (`[n, noise_dim]`) where the belief is stochastic.
    fn commit(&self, tr: &Transition, belief: &Belief, noise: Option<Var>) -> Result<LatentVar>;
    /// Image means `[n, H, W, C]`.
    fn decode_observation(&self, state: &LatentVar) -> Result<Var>;
    /// Reward means `[n, 1]`.
    fn decode_reward(&self, state: &LatentVar) -> Result<Var>;
}

/// The rnn/ssm/rssm model evaluated in one graph with bound parameters.
pub struct LatentModel<'a, T: Real> {
    cfg: &'a ModelConfig,
    g: &'a Graph<T>,
    p: &'a Bound,
    obs_decodes: Cell<usize>,
}

impl<'a, T: Real> LatentModel<'a, T> {
    pub fn new(cfg: &'a ModelConfig, g: &'a Graph<T>, p: &'a Bound) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            g,
            p,
            obs_decodes: Cell::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    /// How many times `decode_observation` ran on this instance.
    pub fn observation_decodes(&self) -> usize {
        self.obs_decodes.get()
    }

    fn act(&self, x: Var) -> Var {
        activate(self.g, self.cfg.activation, x)
    }

    fn mlp_head(&self, prefix: &str, x: Var) -> Result<Var> {
        let hidden = self.act(dense(self.g, self.p, &format!("{prefix}/h1"), x)?);
        dense(self.g, self.p, &format!("{prefix}/out"), hidden)
    }

    fn gauss_head(&self, prefix: &str, x: Var) -> Result<Belief> {
        let out = self.mlp_head(prefix, x)?;
        let gv = GaussVar::from_head(self.g, out, self.cfg.stoch, self.cfg.std_floor);
        Ok(Belief {
            mean: gv.mean,
            std: Some(gv.std),
        })
    }

    /// Decoder input `[h, s]`.
    pub fn features(&self, state: &LatentVar) -> Result<Var> {
        let parts: Vec<Var> = [state.h, state.s].into_iter().flatten().collect();
        match parts.len() {
            0 => Err(Error::dim("latent state has no parts")),
            1 => Ok(parts[0]),
            _ => Ok(self.g.concat_cols(&parts)),
        }
    }

    fn require<'v>(&self, v: &'v Option<Var>, what: &str) -> Result<&'v Var> {
        v.as_ref().ok_or_else(|| Error::FamilyMismatch {
            family: self.cfg.family.to_string(),
            what: what.to_string(),
        })
    }

    fn check_cols(&self, v: Var, want: usize, what: &str) -> Result<()> {
        let s = self.g.shape(v);
        if s.len() != 2 || s[1] != want {
            return Err(Error::dim(format!("{what}: expected [n, {want}], got {s:?}")));
        }
        Ok(())
    }
}

impl<T: Real> SequenceModel<T> for LatentModel<'_, T> {
    fn graph(&self) -> &Graph<T> {
        self.g
    }

    fn noise_dim(&self) -> usize {
        self.cfg.stoch_dim()
    }

    fn action_dim(&self) -> usize {
        self.cfg.action_dim
    }

    fn embed(&self, obs: Var) -> Result<Var> {
        let g = self.g;
        let s = g.shape(obs);
        let want = [self.cfg.image_size, self.cfg.image_size, self.cfg.channels];
        if s.len() != 4 || s[1..] != want {
            return Err(Error::dim(format!("image batch: expected [n, {want:?}], got {s:?}")));
        }
        let mut x = obs;
        for (i, l) in self.cfg.encoder_layers().iter().enumerate() {
            let w = self.p.var(&format!("enc/conv{i}/w"))?;
            let b = self.p.var(&format!("enc/conv{i}/b"))?;
            x = self.act(g.conv2d(x, w, b, l.stride, l.pad));
        }
        Ok(g.reshape(x, &[s[0], self.cfg.embed_dim()]))
    }

    fn initial_state(&self, n: usize) -> LatentVar {
        let g = self.g;
        let zeros = |d: usize| (d > 0).then(|| g.input(Tensor::zeros(&[n, d])));
        LatentVar {
            h: zeros(self.cfg.deter_dim()),
            s: zeros(self.cfg.stoch_dim()),
        }
    }

    fn prior_step(&self, prev: &LatentVar, action: Var) -> Result<Transition> {
        let g = self.g;
        self.check_cols(action, self.cfg.action_dim, "action")?;
        match self.cfg.family {
            Family::Rssm => {
                let (h, s) = (*self.require(&prev.h, "h")?, *self.require(&prev.s, "s")?);
                let x = self.act(dense(g, self.p, "trans/in", g.concat_cols(&[s, action]))?);
                let h = gru(g, self.p, x, h)?;
                let prior = self.gauss_head("prior", h)?;
                Ok(Transition { h: Some(h), prior })
            }
            Family::Ssm => {
                let s = *self.require(&prev.s, "s")?;
                let prior = self.gauss_head("prior", g.concat_cols(&[s, action]))?;
                Ok(Transition { h: None, prior })
            }
            Family::Rnn => {
                let h = *self.require(&prev.h, "h")?;
                let x = self.act(dense(g, self.p, "trans/in", action)?);
                let h = gru(g, self.p, x, h)?;
                Ok(Transition {
                    h: Some(h),
                    prior: Belief { mean: h, std: None },
                })
            }
        }
    }

    fn posterior_step(&self, prev: &LatentVar, action: Var, tr: &Transition, embed: Var) -> Result<Belief> {
        let g = self.g;
        self.check_cols(embed, self.cfg.embed_dim(), "embedding")?;
        match self.cfg.family {
            Family::Rssm => {
                let h = *self.require(&tr.h, "h")?;
                self.gauss_head("post", g.concat_cols(&[h, embed]))
            }
            Family::Ssm => {
                let s = *self.require(&prev.s, "s")?;
                self.gauss_head("post", g.concat_cols(&[s, action, embed]))
            }
            Family::Rnn => {
                let h = *self.require(&tr.h, "h")?;
                let delta = self.mlp_head("post", g.concat_cols(&[h, embed]))?;
                Ok(Belief {
                    mean: g.add(h, delta),
                    std: None,
                })
            }
        }
    }

    fn commit(&self, tr: &Transition, belief: &Belief, noise: Option<Var>) -> Result<LatentVar> {
        match self.cfg.family {
            Family::Rnn => Ok(LatentVar {
                h: Some(belief.mean),
                s: None,
            }),
            _ => {
                let gv = belief.gauss().ok_or_else(|| Error::FamilyMismatch {
                    family: self.cfg.family.to_string(),
                    what: "stochastic belief".into(),
                })?;
                let noise = noise.ok_or_else(|| Error::dim("stochastic state needs noise"))?;
                self.check_cols(noise, self.cfg.stoch, "noise")?;
                Ok(LatentVar {
                    h: tr.h,
                    s: Some(gv.rsample(self.g, noise)),
                })
            }
        }
    }

    fn decode_observation(&self, state: &LatentVar) -> Result<Var> {
        self.obs_decodes.set(self.obs_decodes.get() + 1);
        let g = self.g;
        let f = self.features(state)?;
        let n = g.shape(f)[0];
        let (size, top, layers) = self.cfg.decoder_layers();
        let mut x = g.reshape(dense(g, self.p, "dec/in", f)?, &[n, size, size, top]);
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let w = self.p.var(&format!("dec/deconv{i}/w"))?;
            let b = self.p.var(&format!("dec/deconv{i}/b"))?;
            x = g.conv_transpose2d(x, w, b, l.kernel, l.stride, l.pad);
            if i != last {
                x = self.act(x);
            }
        }
        Ok(x)
    }

    fn decode_reward(&self, state: &LatentVar) -> Result<Var> {
        let g = self.g;
        let f = self.features(state)?;
        let x = self.act(dense(g, self.p, "rew/h1", f)?);
        let x = self.act(dense(g, self.p, "rew/h2", x)?);
        dense(g, self.p, "rew/out", x)
    }
}
