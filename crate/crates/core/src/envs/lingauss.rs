use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Linear-Gaussian system `s_1 ~ N(0, Σ0)`, `s_{t+1} = A s_t + B a_t + w`,
/// `o_t = C s_t + v` with `w ~ N(0, Q)`, `v ~ N(0, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinGaussSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub sigma0: DMatrix<f64>,
}

fn check_psd(name: &str, m: &DMatrix<f64>, n: usize, strict: bool) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dim(format!("{name} must be {n}x{n}")));
    }
    if (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
        return Err(Error::OutOfRange(format!("{name} is not symmetric")));
    }
    let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
    if min_eig <= 0.0 && (strict || min_eig < -1e-12) {
        return Err(Error::Singular(format!("{name} is not positive definite (min eigenvalue {min_eig})")));
    }
    Ok(())
}

impl LinGaussSpec {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn check_dims(&self) -> Result<()> {
        let (n, k) = (self.state_dim(), self.obs_dim());
        if self.a.ncols() != n || self.b.nrows() != n || self.c.ncols() != n {
            return Err(Error::dim("A, B, C dimensions are inconsistent"));
        }
        for (name, m, d) in [("Q", &self.q, n), ("R", &self.r, k), ("Sigma0", &self.sigma0, n)] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::dim(format!("{name} must be {d}x{d}")));
            }
        }
        Ok(())
    }

    /// Checks dimensions and covariances. `Q` may be positive semi-definite
    /// (noiseless transitions); `R` and `Σ0` must be positive definite.
    pub fn validate(&self) -> Result<()> {
        self.check_dims()?;
        let n = self.state_dim();
        check_psd("Q", &self.q, n, false)?;
        check_psd("R", &self.r, self.obs_dim(), true)?;
        check_psd("Sigma0", &self.sigma0, n, true)?;
        Ok(())
    }

    /// Random stable system with spectral radius at most `radius`.
    pub fn random(rng: &mut impl Rng, state_dim: usize, obs_dim: usize, action_dim: usize, radius: f64) -> Self {
        let mut randn = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let raw = randn(state_dim, state_dim);
        let b = randn(state_dim, action_dim) * 0.5;
        let c = randn(obs_dim, state_dim);
        let rho = raw
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(1e-9);
        let a = raw * (radius / rho);
        let mut diag = |d: usize| DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| rng.random_range(0.1..0.5)));
        let q = diag(state_dim);
        let r = diag(obs_dim);
        let sigma0 = DMatrix::identity(state_dim, state_dim);
        Self { a, b, c, q, r, sigma0 }
    }
}

/// Draws from `N(0, cov)` given a PSD covariance.
pub(crate) fn sample_gaussian(rng: &mut impl Rng, cov: &DMatrix<f64>) -> DVector<f64> {
    let n = cov.nrows();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    match Cholesky::new(cov.clone()) {
        Some(ch) => ch.l() * z,
        None => {
            // Semi-definite: use the symmetric square root.
            let e = cov.clone().symmetric_eigen();
            let sqrt = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
            &e.eigenvectors * sqrt * e.eigenvectors.transpose() * z
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinGaussEpisode {
    pub states: Vec<DVector<f64>>,
    pub obs: Vec<DVector<f64>>,
}

/// Simulates `actions.len() + 1` steps.
pub fn lingauss_episode(spec: &LinGaussSpec, actions: &[DVector<f64>], rng: &mut impl Rng) -> Result<LinGaussEpisode> {
    spec.validate()?;
    if actions.iter().any(|a| a.len() != spec.action_dim()) {
        return Err(Error::dim("action dimension does not match B"));
    }
    let mut s = sample_gaussian(rng, &spec.sigma0);
    let mut states = Vec::with_capacity(actions.len() + 1);
    let mut obs = Vec::with_capacity(actions.len() + 1);
    for t in 0..=actions.len() {
        if t > 0 {
            s = &spec.a * &s + &spec.b * &actions[t - 1] + sample_gaussian(rng, &spec.q);
        }
        obs.push(&spec.c * &s + sample_gaussian(rng, &spec.r));
        states.push(s.clone());
    }
    Ok(LinGaussEpisode { states, obs })
}
