use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::elbo::{gaussian_kl, McEstimate};
use super::kalman::gaussian_log_density;
use crate::envs::{lingauss_episode, LinGaussSpec};
use crate::error::{Error, Result};

/// Expected log-likelihood of data from the true system under the one-step
/// model `p_1` and the `d`-step predictive model `p_d`, exact and sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct MultistepGap {
    pub d: usize,
    pub steps: usize,
    pub exact_ln_p1: f64,
    pub exact_ln_pd: f64,
    /// `exact_ln_p1 − exact_ln_pd`, equal to `KL(p_1 || p_d)` over `o_{1:T}`.
    pub exact_gap: f64,
    pub mc_ln_p1: McEstimate,
    pub mc_ln_pd: McEstimate,
    /// Paired per-episode difference `ln p_1 − ln p_d`.
    pub mc_gap: McEstimate,
}

fn mat_pow(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    (0..k).fold(DMatrix::identity(a.nrows(), a.ncols()), |acc, _| &acc * a)
}

/// Joint covariance of `o_{1:T}` (stacked, `T·k` square) when each state is
/// drawn from the `m`-step prediction of an earlier one,
/// `s_t ~ p(s_t | s_{t−m})` with `m = min(d, t − 1)`, and `s_1 ~ N(0, Σ0)`.
/// `d = 1` is the ordinary model. Means do not depend on `d`.
pub fn predictive_covariance(spec: &LinGaussSpec, d: usize, steps: usize) -> Result<DMatrix<f64>> {
    spec.check_dims()?;
    if d == 0 || steps == 0 {
        return Err(Error::config("d and steps must be at least 1"));
    }
    let (n, k) = (spec.state_dim(), spec.obs_dim());
    // Multi-step noise covariances Σ_m = Σ_{j<m} A^j Q A^jᵀ.
    let mut noise = vec![DMatrix::zeros(n, n)];
    for m in 1..=d.min(steps) {
        let aj = mat_pow(&spec.a, m - 1);
        noise.push(&noise[m - 1] + &aj * &spec.q * aj.transpose());
    }
    let mut s = DMatrix::zeros(n * steps, n * steps);
    s.view_mut((0, 0), (n, n)).copy_from(&spec.sigma0);
    for t in 1..steps {
        let m = d.min(t);
        let parent = t - m;
        let am = mat_pow(&spec.a, m);
        for u in 0..t {
            let block = &am * s.view((parent * n, u * n), (n, n));
            s.view_mut((t * n, u * n), (n, n)).copy_from(&block);
            s.view_mut((u * n, t * n), (n, n)).copy_from(&block.transpose());
        }
        let var = &am * s.view((parent * n, parent * n), (n, n)) * am.transpose() + &noise[m];
        s.view_mut((t * n, t * n), (n, n)).copy_from(&var);
    }
    let mut big_c = DMatrix::zeros(k * steps, n * steps);
    let mut big_r = DMatrix::zeros(k * steps, k * steps);
    for t in 0..steps {
        big_c.view_mut((t * k, t * n), (k, n)).copy_from(&spec.c);
        big_r.view_mut((t * k, t * k), (k, k)).copy_from(&spec.r);
    }
    let cov = &big_c * s * big_c.transpose() + big_r;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Compares `E[ln p_1(o_{1:T})]` with `E[ln p_d(o_{1:T})]` for data simulated
/// from the system itself (zero actions), in closed form and over `episodes`
/// sampled episodes.
pub fn exact_multistep_gap(
    spec: &LinGaussSpec,
    d: usize,
    steps: usize,
    episodes: usize,
    rng: &mut impl Rng,
) -> Result<MultistepGap> {
    spec.validate()?;
    if episodes < 2 {
        return Err(Error::config("at least two episodes are needed for a standard error"));
    }
    let cov1 = predictive_covariance(spec, 1, steps)?;
    let covd = predictive_covariance(spec, d, steps)?;
    let zero = DVector::zeros(cov1.nrows());
    let dim = cov1.nrows() as f64;
    let ch1 = cov1
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("one-step predictive covariance".into()))?;
    let logdet1 = 2.0 * ch1.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let exact_ln_p1 = -0.5 * (dim * (2.0 * std::f64::consts::PI).ln() + logdet1 + dim);
    let exact_gap = gaussian_kl(&zero, &cov1, &zero, &covd)?;
    let actions = vec![DVector::zeros(spec.action_dim()); steps - 1];
    let (mut l1, mut ld, mut gap) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..episodes {
        let ep = lingauss_episode(spec, &actions, rng)?;
        let o = DVector::from_iterator(cov1.nrows(), ep.obs.iter().flat_map(|v| v.iter().copied()));
        let a = gaussian_log_density(&o, &zero, &cov1)?;
        let b = gaussian_log_density(&o, &zero, &covd)?;
        l1.push(a);
        ld.push(b);
        gap.push(a - b);
    }
    Ok(MultistepGap {
        d,
        steps,
        exact_ln_p1,
        exact_ln_pd: exact_ln_p1 - exact_gap,
        exact_gap,
        mc_ln_p1: McEstimate::from_samples(&l1),
        mc_ln_pd: McEstimate::from_samples(&ld),
        mc_gap: McEstimate::from_samples(&gap),
    })
}
