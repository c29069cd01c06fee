use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::envs::LinGaussSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanResult {
    /// `p(s_t | o_{<t})`.
    pub pred_means: Vec<DVector<f64>>,
    pub pred_covs: Vec<DMatrix<f64>>,
    /// `p(s_t | o_{≤t})`.
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// `ln p(o_t | o_{<t})`.
    pub step_loglik: Vec<f64>,
    pub total: f64,
}

fn chol(name: &str, m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Singular(format!("{name} is not positive definite")))
}

/// `ln N(x; mean, cov)`.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let ch = chol("covariance", cov)?;
    let d = x - mean;
    let maha = d.dot(&ch.solve(&d));
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (x.len() as f64 * (2.0 * PI).ln() + logdet + maha))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Exact filtering for `obs.len()` steps; `actions[t]` drives `s_t → s_{t+1}`
/// so there must be `obs.len() − 1` of them.
pub fn kalman_loglik(spec: &LinGaussSpec, obs: &[DVector<f64>], actions: &[DVector<f64>]) -> Result<KalmanResult> {
    spec.check_dims()?;
    let (n, k) = (spec.state_dim(), spec.obs_dim());
    if obs.is_empty() || actions.len() + 1 != obs.len() {
        return Err(Error::dim(format!("{} observations need {} actions, got {}", obs.len(), obs.len().saturating_sub(1), actions.len())));
    }
    if obs.iter().any(|o| o.len() != k) || actions.iter().any(|a| a.len() != spec.action_dim()) {
        return Err(Error::dim("observation or action dimension mismatch"));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut m = DVector::zeros(n);
    let mut p = spec.sigma0.clone();
    let mut out = KalmanResult {
        pred_means: Vec::new(),
        pred_covs: Vec::new(),
        means: Vec::new(),
        covs: Vec::new(),
        step_loglik: Vec::new(),
        total: 0.0,
    };
    for (t, o) in obs.iter().enumerate() {
        if t > 0 {
            m = &spec.a * &m + &spec.b * &actions[t - 1];
            p = symmetrize(&spec.a * &p * spec.a.transpose() + &spec.q);
        }
        out.pred_means.push(m.clone());
        out.pred_covs.push(p.clone());
        let s = symmetrize(&spec.c * &p * spec.c.transpose() + &spec.r);
        let ch = chol(&format!("innovation covariance at step {}", t + 1), &s)?;
        let v = o - &spec.c * &m;
        let ll = gaussian_log_density(o, &(&spec.c * &m), &s)?;
        let gain = (ch.solve(&(&spec.c * &p))).transpose();
        m += &gain * v;
        let j = &eye - &gain * &spec.c;
        // Joseph form keeps the covariance symmetric positive definite.
        p = symmetrize(&j * &p * j.transpose() + &gain * &spec.r * gain.transpose());
        out.means.push(m.clone());
        out.covs.push(p.clone());
        out.step_loglik.push(ll);
        out.total += ll;
    }
    Ok(out)
}

/// Stationary filtered variance of a scalar system, by iterating the
/// predict/update recursion to convergence.
pub fn riccati_fixed_point(a: f64, c: f64, q: f64, r: f64) -> f64 {
    let mut p = 1.0;
    for _ in 0..100_000 {
        let pred = a * a * p + q;
        let next = pred * r / (c * c * pred + r);
        if (next - p).abs() <= 1e-15 * p.abs().max(1e-300) {
            return next;
        }
        p = next;
    }
    p
}
