use super::{Belief, LatentVar, SequenceModel};
use crate::diffcore::{Graph, Real, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct FilterOutput {
    pub priors: Vec<Belief>,
    pub posteriors: Vec<Belief>,
    /// Posterior states, one per step.
    pub states: Vec<LatentVar>,
}

fn step_rows(total: usize, steps: usize, what: &str) -> Result<usize> {
    if steps == 0 || total % steps != 0 {
        return Err(Error::dim(format!("{what}: {total} rows not divisible into {steps} steps")));
    }
    Ok(total / steps)
}

fn rows_at<T: Real>(g: &Graph<T>, v: Option<Var>, t: usize, n: usize) -> Option<Var> {
    v.map(|x| g.slice_rows(x, t * n, (t + 1) * n))
}

/// Alternates prior and posterior steps over `steps` time-major blocks.
///
/// `embeds` is `[steps * n, E]`; `actions[t]` is the action taken before
/// observation `t`; `noise` is `[steps * n, noise_dim]` (ignored for
/// deterministic models).
pub fn filter_sequence<T: Real, M: SequenceModel<T>>(
    m: &M,
    init: &LatentVar,
    embeds: Var,
    actions: Var,
    noise: Option<Var>,
    steps: usize,
) -> Result<FilterOutput> {
    let g = m.graph();
    let n = step_rows(g.shape(embeds)[0], steps, "embeddings")?;
    if g.shape(actions)[0] != steps * n {
        return Err(Error::dim(format!(
            "observations cover {steps} steps of {n} rows but actions have {} rows",
            g.shape(actions)[0]
        )));
    }
    let mut out = FilterOutput::default();
    let mut state = *init;
    for t in 0..steps {
        let a = g.slice_rows(actions, t * n, (t + 1) * n);
        let e = g.slice_rows(embeds, t * n, (t + 1) * n);
        let tr = m.prior_step(&state, a)?;
        let post = m.posterior_step(&state, a, &tr, e)?;
        state = m.commit(&tr, &post, rows_at(g, noise, t, n))?;
        out.priors.push(tr.prior);
        out.posteriors.push(post);
        out.states.push(state);
    }
    Ok(out)
}

/// Repeated prior steps from `init`, sampling each state from its prior.
/// Returns the sampled states and the priors they came from.
pub fn rollout_prior<T: Real, M: SequenceModel<T>>(
    m: &M,
    init: &LatentVar,
    actions: Var,
    noise: Option<Var>,
    steps: usize,
) -> Result<Vec<(LatentVar, Belief)>> {
    if steps == 0 {
        return Ok(Vec::new());
    }
    let g = m.graph();
    let n = step_rows(g.shape(actions)[0], steps, "actions")?;
    let mut out = Vec::with_capacity(steps);
    let mut state = *init;
    for t in 0..steps {
        let a = g.slice_rows(actions, t * n, (t + 1) * n);
        let tr = m.prior_step(&state, a)?;
        state = m.commit(&tr, &tr.prior, rows_at(g, noise, t, n))?;
        out.push((state, tr.prior));
    }
    Ok(out)
}

/// Stacks states row-wise (all must share the same parts).
pub fn stack_states<T: Real>(g: &Graph<T>, states: &[LatentVar]) -> Result<LatentVar> {
    let collect = |f: fn(&LatentVar) -> Option<Var>| -> Result<Option<Var>> {
        let parts: Vec<Option<Var>> = states.iter().map(f).collect();
        if parts.iter().all(Option::is_none) {
            return Ok(None);
        }
        let vars: Option<Vec<Var>> = parts.into_iter().collect();
        let vars = vars.ok_or_else(|| Error::dim("cannot stack states with different parts"))?;
        Ok(Some(if vars.len() == 1 { vars[0] } else { g.concat_rows(&vars) }))
    };
    Ok(LatentVar {
        h: collect(|s| s.h)?,
        s: collect(|s| s.s)?,
    })
}

pub fn slice_state<T: Real>(g: &Graph<T>, s: &LatentVar, start: usize, end: usize) -> LatentVar {
    LatentVar {
        h: s.h.map(|x| g.slice_rows(x, start, end)),
        s: s.s.map(|x| g.slice_rows(x, start, end)),
    }
}
