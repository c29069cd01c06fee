use crate::error::{Error, Result};

pub const MAX_GRID_POINTS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForceResult {
    /// `[H][A]`, flattened.
    pub actions: Vec<f64>,
    pub value: f64,
    /// Flattened grid index (first coordinate most significant).
    pub index: usize,
    /// Grid spacing.
    pub cell: f64,
}

/// Exhaustive search of `reward` over a `grid_res`-point grid per coordinate
/// of the `[low, high]^(H·A)` box. Ties go to the lowest flattened index;
/// non-finite rewards are skipped.
pub fn brute_force_best_sequence(
    reward: impl Fn(&[f64]) -> f64,
    horizon: usize,
    action_dim: usize,
    grid_res: usize,
    low: f64,
    high: f64,
) -> Result<BruteForceResult> {
    let dims = horizon * action_dim;
    if dims == 0 || grid_res < 2 || !(low < high) {
        return Err(Error::config("need H·A ≥ 1, grid_res ≥ 2 and low < high"));
    }
    let total = (0..dims)
        .try_fold(1usize, |acc, _| acc.checked_mul(grid_res).filter(|&v| v <= MAX_GRID_POINTS))
        .ok_or_else(|| Error::config(format!("grid of {grid_res}^{dims} points exceeds {MAX_GRID_POINTS}")))?;
    let cell = (high - low) / (grid_res - 1) as f64;
    let mut digits = vec![0usize; dims];
    let mut point = vec![low; dims];
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for index in 0..total {
        let v = reward(&point);
        if v.is_finite() && best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, index, point.clone()));
        }
        // Odometer increment, last coordinate fastest.
        for i in (0..dims).rev() {
            digits[i] += 1;
            if digits[i] < grid_res {
                point[i] = low + digits[i] as f64 * cell;
                break;
            }
            digits[i] = 0;
            point[i] = low;
        }
    }
    let (value, index, actions) = best.ok_or_else(|| Error::NonFinite("every grid reward is non-finite".into()))?;
    Ok(BruteForceResult { actions, value, index, cell })
}
