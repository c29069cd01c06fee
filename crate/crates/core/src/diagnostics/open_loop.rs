use std::path::{Path, PathBuf};

use rand::SeedableRng;

use super::{diagnostics_dir, write_ppm};
use crate::agent::AgentConfig;
use crate::diffcore::{Graph, ParamStore, Tensor};
use crate::envs::{preprocess, to_pixels, EpisodeRecord};
use crate::error::{Error, Result};
use crate::models::{filter_sequence, rollout_prior, stack_states, LatentModel, SequenceModel};
use crate::rng::{normals, StreamRng};

#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopReport {
    pub context: usize,
    pub horizon: usize,
    /// Per predicted frame, in preprocessed units; the first `context`
    /// entries are reconstructions.
    pub mse: Vec<f64>,
    pub truth: Vec<u8>,
    pub prediction: Vec<u8>,
    pub image_size: usize,
}

impl OpenLoopReport {
    /// MSE of the `k`-th open-loop frame (1-based).
    pub fn open_loop_mse(&self, k: usize) -> Option<f64> {
        (k >= 1 && k <= self.horizon).then(|| self.mse[self.context + k - 1])
    }
}

/// Filters the first `context` frames (frames 1..=context, from the zero
/// state) and then predicts `horizon` further frames from the recorded
/// actions alone.
pub fn open_loop_predict(
    cfg: &AgentConfig,
    params: &ParamStore<f32>,
    episode: &EpisodeRecord,
    context: usize,
    horizon: usize,
    seed: u64,
) -> Result<OpenLoopReport> {
    let mcfg = &cfg.model;
    let n = context + horizon;
    if context == 0 {
        return Err(Error::config("open-loop prediction needs at least one context frame"));
    }
    if episode.steps() < n {
        return Err(Error::InsufficientData(format!(
            "episode has {} steps, need context + horizon = {n}",
            episode.steps()
        )));
    }
    if episode.image_size != mcfg.image_size || episode.action_dim != mcfg.action_dim {
        return Err(Error::dim("episode does not match the model's image or action size"));
    }
    let size = mcfg.image_size;
    let g = Graph::<f32>::inference();
    let bound = params.bind(&g);
    let m = LatentModel::new(mcfg, &g, &bound)?;
    let mut rng = StreamRng::seed_from_u64(seed);

    let truth: Vec<u8> = (1..=n).flat_map(|f| episode.frame(f).to_vec()).collect();
    let frame_len = episode.frame_len();
    let ctx_obs = Tensor::new(&[context, size, size, 3], preprocess::<f32>(&truth[..context * frame_len]))?;
    let acts: Vec<f32> = (1..=n).flat_map(|f| episode.action(f - 1).to_vec()).collect();
    let acts = g.input(Tensor::new(&[n, mcfg.action_dim], acts)?);
    let nd = m.noise_dim();
    let mut noise = |rows: usize| -> Result<Option<crate::diffcore::Var>> {
        if nd == 0 || rows == 0 {
            return Ok(None);
        }
        Ok(Some(g.input(Tensor::new(&[rows, nd], normals(&mut rng, rows * nd))?)))
    };

    let embeds = m.embed(g.input(ctx_obs))?;
    let filt = filter_sequence(&m, &m.initial_state(1), embeds, g.slice_rows(acts, 0, context), noise(context)?, context)?;
    let last = *filt.states.last().expect("context >= 1");
    let mut states = filt.states.clone();
    if horizon > 0 {
        let roll = rollout_prior(&m, &last, g.slice_rows(acts, context, n), noise(horizon)?, horizon)?;
        states.extend(roll.into_iter().map(|(s, _)| s));
    }
    let decoded = g.tensor(m.decode_observation(&stack_states(&g, &states)?)?);
    let target: Vec<f32> = preprocess(&truth);
    let mse = (0..n)
        .map(|t| {
            let (p, q) = (&decoded.data()[t * frame_len..(t + 1) * frame_len], &target[t * frame_len..(t + 1) * frame_len]);
            p.iter().zip(q).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / frame_len as f64
        })
        .collect();
    Ok(OpenLoopReport {
        context,
        horizon,
        mse,
        truth,
        prediction: to_pixels(decoded.data()),
        image_size: size,
    })
}

/// Writes `open_loop.ppm` (rows: truth, prediction, absolute error; one
/// column per frame) and `open_loop_mse.csv`. Returns both paths.
pub fn write_open_loop(report: &OpenLoopReport, out_dir: &Path, config_hash: &str) -> Result<(PathBuf, PathBuf)> {
    let dir = diagnostics_dir(out_dir)?;
    let (s, n) = (report.image_size, report.mse.len());
    let width = s * n;
    let mut grid = vec![0u8; 3 * s * width * 3];
    let error: Vec<u8> = report.truth.iter().zip(&report.prediction).map(|(a, b)| a.abs_diff(*b)).collect();
    for (row, src) in [&report.truth, &report.prediction, &error].into_iter().enumerate() {
        for f in 0..n {
            for y in 0..s {
                let from = (f * s * s + y * s) * 3;
                let to = ((row * s + y) * width + f * s) * 3;
                grid[to..to + s * 3].copy_from_slice(&src[from..from + s * 3]);
            }
        }
    }
    let ppm = dir.join("open_loop.ppm");
    write_ppm(&ppm, width, 3 * s, &grid)?;
    let csv_path = dir.join("open_loop_mse.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["config_hash", "step", "phase", "mse"])?;
    for (t, e) in report.mse.iter().enumerate() {
        let phase = if t < report.context { "context" } else { "open_loop" };
        w.write_record([config_hash, &(t + 1).to_string(), phase, &e.to_string()])?;
    }
    w.flush()?;
    Ok((ppm, csv_path))
}
