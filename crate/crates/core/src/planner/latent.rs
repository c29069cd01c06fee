use std::cell::Cell;

use super::PlanningModel;
use crate::diffcore::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::models::{LatentModel, LatentState, LatentVar, ModelConfig, SequenceModel};

/// Filtering belief over the current latent state of a single environment:
/// the deterministic activation and, for stochastic families, the
/// posterior over the stochastic part.
#[derive(Clone, Debug, PartialEq)]
pub struct StateBelief {
    pub h: Option<Vec<f32>>,
    pub mean: Option<Vec<f32>>,
    pub std: Option<Vec<f32>>,
}

impl StateBelief {
    /// Draws one state using `noise` (length = stochastic size; ignored if none).
    pub fn sample(&self, noise: &[f32]) -> Result<LatentState<f32>> {
        let s = match (&self.mean, &self.std) {
            (Some(m), Some(sd)) => {
                if noise.len() != m.len() {
                    return Err(Error::dim("belief sample noise has the wrong length"));
                }
                let v: Vec<f32> = m.iter().zip(sd).zip(noise).map(|((m, s), e)| m + s * e).collect();
                Some(Tensor::new(&[1, v.len()], v)?)
            }
            _ => None,
        };
        Ok(LatentState {
            h: self.h.as_ref().map(|h| Tensor::new(&[1, h.len()], h.clone())).transpose()?,
            s,
        })
    }

    /// Filters one observation: a prior step from `prev` with `action`
    /// followed by the posterior on the observation. `image` is a
    /// preprocessed `[1, H, W, C]` array.
    pub fn observe(
        cfg: &ModelConfig,
        params: &ParamStore<f32>,
        prev: &LatentState<f32>,
        action: &[f32],
        image: &Tensor<f32>,
    ) -> Result<StateBelief> {
        let g = Graph::<f32>::inference();
        let b = params.bind(&g);
        let m = LatentModel::new(cfg, &g, &b)?;
        let prev = prev.input(&g);
        let a = g.input(Tensor::new(&[1, action.len()], action.to_vec())?);
        let tr = m.prior_step(&prev, a)?;
        let e = m.embed(g.input(image.clone()))?;
        let post = m.posterior_step(&prev, a, &tr, e)?;
        let flat = |v: crate::diffcore::Var| g.tensor(v).into_data();
        Ok(match post.std {
            None => StateBelief {
                h: Some(flat(post.mean)),
                mean: None,
                std: None,
            },
            Some(sd) => StateBelief {
                h: tr.h.map(flat),
                mean: Some(flat(post.mean)),
                std: Some(flat(sd)),
            },
        })
    }

    /// The all-zero state a filter starts from.
    pub fn zero_state(cfg: &ModelConfig) -> LatentState<f32> {
        let z = |d: usize| (d > 0).then(|| Tensor::zeros(&[1, d]));
        LatentState {
            h: z(cfg.deter_dim()),
            s: z(cfg.stoch_dim()),
        }
    }
}

/// Scores candidates by rolling the learned prior forward from a belief and
/// summing predicted reward means.
pub struct LatentPlanningModel<'a> {
    cfg: &'a ModelConfig,
    params: &'a ParamStore<f32>,
    belief: StateBelief,
    obs_decodes: Cell<usize>,
}

impl<'a> LatentPlanningModel<'a> {
    pub fn new(cfg: &'a ModelConfig, params: &'a ParamStore<f32>, belief: StateBelief) -> Self {
        Self {
            cfg,
            params,
            belief,
            obs_decodes: Cell::new(0),
        }
    }

    /// Image decodes performed while scoring (planning stays in latent space).
    pub fn observation_decodes(&self) -> usize {
        self.obs_decodes.get()
    }
}

fn repeat_rows(v: &[f32], n: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(v.len() * n);
    for _ in 0..n {
        data.extend_from_slice(v);
    }
    Tensor::new(&[n, v.len()], data).expect("shape")
}

impl PlanningModel for LatentPlanningModel<'_> {
    fn action_dim(&self) -> usize {
        self.cfg.action_dim
    }

    fn noise_dim(&self) -> usize {
        self.cfg.stoch_dim()
    }

    fn returns(&self, actions: &[f64], candidates: usize, steps: usize, noise: &[f64]) -> Result<Vec<f64>> {
        let (j, a, nd) = (candidates, self.cfg.action_dim, self.noise_dim());
        let g = Graph::<f32>::inference();
        let b = self.params.bind(&g);
        let m = LatentModel::new(self.cfg, &g, &b)?;
        let noise_block = |t: usize| -> Tensor<f32> {
            let d: Vec<f32> = noise[t * j * nd..(t + 1) * j * nd].iter().map(|&x| x as f32).collect();
            Tensor::new(&[j, nd], d).expect("shape")
        };
        let mut state = LatentState {
            h: self.belief.h.as_ref().map(|h| repeat_rows(h, j)),
            s: match (&self.belief.mean, &self.belief.std) {
                (Some(mu), Some(sd)) => {
                    let e = noise_block(0);
                    let data: Vec<f32> = e
                        .data()
                        .chunks(nd)
                        .flat_map(|row| row.iter().zip(mu).zip(sd).map(|((e, m), s)| m + s * e))
                        .collect();
                    Some(Tensor::new(&[j, nd], data)?)
                }
                _ => None,
            },
        };
        let mut total = vec![0.0f64; j];
        let mark = g.mark();
        for t in 0..steps {
            let act: Vec<f32> = (0..j)
                .flat_map(|c| actions[(c * steps + t) * a..(c * steps + t + 1) * a].iter().map(|&x| x as f32))
                .collect();
            let cur: LatentVar = state.input(&g);
            let tr = m.prior_step(&cur, g.input(Tensor::new(&[j, a], act)?))?;
            let eps = (nd > 0).then(|| g.input(noise_block(t + 1)));
            let next = m.commit(&tr, &tr.prior, eps)?;
            let r = g.tensor(m.decode_reward(&next)?);
            for (acc, v) in total.iter_mut().zip(r.data()) {
                *acc += *v as f64;
            }
            state = LatentState::read(&g, &next);
            g.truncate(mark);
        }
        self.obs_decodes.set(self.obs_decodes.get() + m.observation_decodes());
        Ok(total)
    }
}
