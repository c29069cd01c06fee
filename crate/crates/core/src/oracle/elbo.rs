use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::kalman::{gaussian_log_density, KalmanResult};
use crate::envs::{sample_gaussian, LinGaussSpec};
use crate::error::{Error, Result};

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        McEstimate { mean, se: (var / n).sqrt(), samples: xs.len() }
    }
}

fn inverse(name: &str, m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let ch = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{name} is not positive definite")))?;
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((ch.inverse(), logdet))
}

/// `KL(N(m1, p1) || N(m2, p2))` for full covariances.
pub fn gaussian_kl(m1: &DVector<f64>, p1: &DMatrix<f64>, m2: &DVector<f64>, p2: &DMatrix<f64>) -> Result<f64> {
    let (inv2, ld2) = inverse("KL target covariance", p2)?;
    let (_, ld1) = inverse("KL source covariance", p1)?;
    let d = m2 - m1;
    Ok(0.5 * ((&inv2 * p1).trace() + d.dot(&(&inv2 * &d)) - m1.len() as f64 + ld2 - ld1))
}

fn prior_mean(spec: &LinGaussSpec, prev: &DVector<f64>, action: &DVector<f64>) -> DVector<f64> {
    &spec.a * prev + &spec.b * action
}

/// The per-step variational bound with the exact filtering posteriors
/// `q(s_t) = N(means[t], covs[t])` as the encoder, in closed form:
/// `Σ_t E_q[ln p(o_t|s_t)] − E_{q(s_{t−1})}[KL(q(s_t) || p(s_t|s_{t−1}, a_{t−1}))]`.
pub fn elbo_exact_posterior(
    spec: &LinGaussSpec,
    obs: &[DVector<f64>],
    actions: &[DVector<f64>],
    filt: &KalmanResult,
) -> Result<f64> {
    check(obs, actions, filt)?;
    let n = spec.state_dim() as f64;
    let (rinv, _) = inverse("R", &spec.r)?;
    let (qinv, ldq) = inverse("Q", &spec.q)?;
    let mut total = 0.0;
    for (t, o) in obs.iter().enumerate() {
        let (m, p) = (&filt.means[t], &filt.covs[t]);
        let ct = spec.c.transpose();
        total += gaussian_log_density(o, &(&spec.c * m), &spec.r)? - 0.5 * (&rinv * &spec.c * p * &ct).trace();
        if t == 0 {
            total -= gaussian_kl(m, p, &DVector::zeros(m.len()), &spec.sigma0)?;
        } else {
            let (mp, pp) = (&filt.means[t - 1], &filt.covs[t - 1]);
            let mu = prior_mean(spec, mp, &actions[t - 1]);
            let d = m - &mu;
            let (_, ldp) = inverse("posterior covariance", p)?;
            let spread = (&qinv * &spec.a * pp * spec.a.transpose()).trace();
            total -= 0.5 * ((&qinv * p).trace() + d.dot(&(&qinv * &d)) + spread - n + ldq - ldp);
        }
    }
    Ok(total)
}

/// Unbiased sample estimate of [`elbo_exact_posterior`]: each sample draws
/// every `s_t` from its filtering posterior and evaluates the inner KL terms
/// in closed form.
pub fn elbo_monte_carlo(
    spec: &LinGaussSpec,
    obs: &[DVector<f64>],
    actions: &[DVector<f64>],
    filt: &KalmanResult,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<McEstimate> {
    check(obs, actions, filt)?;
    if samples < 2 {
        return Err(Error::config("at least two samples are needed for a standard error"));
    }
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let draws: Vec<DVector<f64>> = filt
            .means
            .iter()
            .zip(&filt.covs)
            .map(|(m, p)| m + sample_gaussian(rng, p))
            .collect();
        let mut v = 0.0;
        for (t, o) in obs.iter().enumerate() {
            let (m, p) = (&filt.means[t], &filt.covs[t]);
            v += gaussian_log_density(o, &(&spec.c * &draws[t]), &spec.r)?;
            v -= if t == 0 {
                gaussian_kl(m, p, &DVector::zeros(m.len()), &spec.sigma0)?
            } else {
                gaussian_kl(m, p, &prior_mean(spec, &draws[t - 1], &actions[t - 1]), &spec.q)?
            };
        }
        values.push(v);
    }
    Ok(McEstimate::from_samples(&values))
}

fn check(obs: &[DVector<f64>], actions: &[DVector<f64>], filt: &KalmanResult) -> Result<()> {
    if obs.len() != filt.means.len() || actions.len() + 1 != obs.len() {
        return Err(Error::dim("filter result, observations and actions disagree in length"));
    }
    Ok(())
}
