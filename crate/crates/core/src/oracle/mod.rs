//! Exact double-precision references: Kalman filtering for linear-Gaussian
//! systems, the variational bound under the exact filtering posterior, the
//! one-step vs multi-step predictive gap, and exhaustive action search.

mod brute;
mod elbo;
mod kalman;
mod multistep;

pub use brute::{brute_force_best_sequence, BruteForceResult, MAX_GRID_POINTS};
pub use elbo::{elbo_exact_posterior, elbo_monte_carlo, gaussian_kl, McEstimate};
pub use kalman::{gaussian_log_density, kalman_loglik, riccati_fixed_point, KalmanResult};
pub use multistep::{exact_multistep_gap, predictive_covariance, MultistepGap};
