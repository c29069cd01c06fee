use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::diagnostics_dir;
use crate::envs::{make_env, EnvConfig, TrueDynamics};
use crate::error::{Error, Result};
use crate::planner::{cem_plan, PlannerConfig};
use crate::rng::RngStreams;

/// Planner settings to cross; every combination is one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub horizon: Vec<usize>,
    pub iterations: Vec<usize>,
    pub candidates: Vec<usize>,
    pub top_k: Vec<usize>,
    /// Episodes per cell.
    pub episodes: usize,
    pub action_repeat: usize,
    pub seed: u64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            horizon: vec![12],
            iterations: vec![10],
            candidates: vec![1000],
            top_k: vec![100],
            episodes: 10,
            action_repeat: 2,
            seed: 0,
        }
    }
}

impl SweepGrid {
    pub fn config_hash(&self, env: &EnvConfig) -> String {
        let json = serde_json::to_string(&(env, self)).expect("serializable");
        Sha256::digest(json.as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub horizon: usize,
    pub iterations: usize,
    pub candidates: usize,
    pub top_k: usize,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One episode of CEM planning against a perfect copy of the simulator,
/// replanning every agent step. Returns the episode return.
pub fn true_dynamics_episode(env_cfg: &EnvConfig, planner: &PlannerConfig, repeat: usize, streams: &RngStreams) -> Result<f64> {
    let mut env = make_env(env_cfg)?;
    let spec = env.spec().clone();
    let planner = PlannerConfig {
        action_low: vec![spec.action_low; spec.action_dim],
        action_high: vec![spec.action_high; spec.action_dim],
        ..planner.clone()
    };
    env.reset(&mut streams.stream("reset", 0));
    let mut plan_rng = streams.stream("plan", 0);
    let mut total = 0.0;
    let mut t = 0;
    while t < spec.episode_len {
        let action = cem_plan(&TrueDynamics::new(env.as_ref(), repeat), &planner, &mut plan_rng)?;
        for _ in 0..repeat.min(spec.episode_len - t) {
            total += env.step(&action);
            t += 1;
        }
    }
    Ok(total)
}

/// Mean and median return per grid cell. Every cell sees the same episode
/// start states.
pub fn planner_sweep(env_cfg: &EnvConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    if grid.episodes == 0 || grid.action_repeat == 0 {
        return Err(Error::config("sweep needs episodes >= 1 and action_repeat >= 1"));
    }
    let streams = RngStreams::new(grid.seed);
    let mut rows = Vec::new();
    for &horizon in &grid.horizon {
        for &iterations in &grid.iterations {
            for &candidates in &grid.candidates {
                for &top_k in &grid.top_k {
                    let planner = PlannerConfig { horizon, iterations, candidates, top_k, ..Default::default() };
                    let returns = (0..grid.episodes)
                        .map(|e| true_dynamics_episode(env_cfg, &planner, grid.action_repeat, &streams.child("episode", e as u64)))
                        .collect::<Result<Vec<f64>>>()?;
                    rows.push(SweepRow {
                        horizon,
                        iterations,
                        candidates,
                        top_k,
                        mean: returns.iter().sum::<f64>() / returns.len() as f64,
                        median: median(&returns),
                        returns,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Writes `planner_sweep.csv` with one row per cell.
pub fn write_sweep(rows: &[SweepRow], out_dir: &Path, config_hash: &str) -> Result<PathBuf> {
    let path = diagnostics_dir(out_dir)?.join("planner_sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["config_hash", "horizon", "iterations", "candidates", "top_k", "mean_return", "median_return", "returns"])?;
    for r in rows {
        let returns: Vec<String> = r.returns.iter().map(|v| v.to_string()).collect();
        w.write_record([
            config_hash.to_string(),
            r.horizon.to_string(),
            r.iterations.to_string(),
            r.candidates.to_string(),
            r.top_k.to_string(),
            r.mean.to_string(),
            r.median.to_string(),
            returns.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(path)
}
