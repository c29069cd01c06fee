use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::collect::{collect_episode, CollectStats, Policy};
use super::config::{AgentConfig, Collection};
use super::dataset::ReplayDataset;
use crate::diffcore::{clip_global_norm, AdamConfig, Graph, ParamStore};
use crate::envs::{make_env, write_episode};
use crate::error::{Error, Result};
use crate::models::{init_params, LatentModel, ModelConfig};
use crate::objectives::{loss_graph, LossBreakdown, LossNoise, ObjectiveConfig, SeqBatch};
use crate::rng::RngStreams;

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// One optimizer step on a batch: loss, backprop, global-norm clipping, Adam.
/// Parameters are left untouched if the loss or gradients are not finite.
pub fn train_update(
    model: &ModelConfig,
    objective: &ObjectiveConfig,
    params: &mut ParamStore<f32>,
    batch: &SeqBatch<f32>,
    noise: &LossNoise<f32>,
    adam: &AdamConfig,
    clip: f64,
) -> Result<UpdateStats> {
    let g = Graph::<f32>::new();
    let bound = params.bind(&g);
    let m = LatentModel::new(model, &g, &bound)?;
    let lg = loss_graph(&m, batch, noise, objective)?;
    let loss = lg.breakdown(&g)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite(format!("loss is {}", loss.total)));
    }
    let grads = g.backward(lg.total);
    let mut named = bound.grads(&g, &grads);
    drop(grads);
    let report = clip_global_norm(&mut named, clip)?;
    if !report.finite {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    params.adam_step(&named, adam)?;
    Ok(UpdateStats {
        loss,
        grad_norm: report.norm,
        clipped: report.clipped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub updates: usize,
    pub episodes: usize,
    pub final_checkpoint: PathBuf,
    /// Returns of the last test evaluation.
    pub test_returns: Vec<f64>,
    /// Planner invocations during data collection (not evaluation).
    pub collection_planner_calls: usize,
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

pub fn checkpoint_path(out_dir: &Path, step: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{step}"))
}

fn save_checkpoint(params: &ParamStore<f32>, cfg: &AgentConfig, out_dir: &Path, step: usize, episodes: usize) -> Result<PathBuf> {
    let path = checkpoint_path(out_dir, step);
    params.save(
        &path,
        json!({
            "step": step,
            "episodes": episodes,
            "config_hash": cfg.config_hash(),
            "config": cfg,
        }),
    )?;
    Ok(path)
}

/// Loads a checkpoint written by [`train`] with the agent configuration
/// stored alongside it.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f32>, AgentConfig)> {
    let (params, meta) = ParamStore::<f32>::load(path)?;
    let cfg: AgentConfig = serde_json::from_value(meta.get("config").cloned().ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        reason: "checkpoint metadata has no agent config".into(),
    })?)?;
    crate::models::check_params(&cfg.model, &params)?;
    Ok((params, cfg))
}

/// Test returns of the planning agent without exploration noise.
pub fn evaluate(cfg: &AgentConfig, params: &ParamStore<f32>, episodes: usize, streams: &RngStreams) -> Result<Vec<f64>> {
    let mut env = make_env(&cfg.env)?;
    let policy = Policy::Planned {
        model: &cfg.model,
        params,
        planner: &cfg.planner,
        method: cfg.planning,
    };
    (0..episodes)
        .map(|i| {
            let (ep, _) = collect_episode(env.as_mut(), &policy, cfg.action_repeat, 0.0, &streams.child("test", i as u64))?;
            Ok(ep.total_reward())
        })
        .collect()
}

/// The full loop: `S` random seed episodes, then repeatedly `C` updates on
/// sampled chunks followed by one collected episode, until the episode budget
/// is spent. Writes episodes, checkpoints, metrics and the resolved config
/// under `out_dir`.
pub fn train(cfg: &AgentConfig, out_dir: &Path) -> Result<TrainSummary> {
    let cfg = cfg.clone().resolve()?;
    for sub in ["episodes", "checkpoints", "metrics"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    fs::write(out_dir.join("config.json"), crate::config::to_flat_json(&cfg)?)?;
    let hash = cfg.config_hash();
    let streams = RngStreams::new(cfg.seed);
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        eps: cfg.adam_epsilon,
        ..AdamConfig::default()
    };
    let mut params = init_params::<f32>(&cfg.model, &mut streams.stream("init", 0))?;
    let mut env = make_env(&cfg.env)?;
    let mut data = ReplayDataset::new();

    let mut train_csv = csv_writer(
        &out_dir.join("metrics/train.csv"),
        &["config_hash", "step", "episodes", "loss", "reconstruction", "reward", "divergence", "grad_norm", "clipped"],
    )?;
    let mut episode_csv = csv_writer(
        &out_dir.join("metrics/episodes.csv"),
        &["config_hash", "episode", "kind", "return", "steps", "planner_calls"],
    )?;
    let mut test_csv = csv_writer(
        &out_dir.join("metrics/test.csv"),
        &["config_hash", "step", "episodes", "trajectory", "return"],
    )?;

    let store = |data: &mut ReplayDataset, ep: crate::envs::EpisodeRecord, stats: &CollectStats, kind: &str, w: &mut csv::Writer<fs::File>| -> Result<()> {
        let index = data.len() + 1;
        write_episode(&out_dir.join("episodes").join(format!("{index:06}.bin")), &ep)?;
        let steps = ep.steps();
        w.write_record([
            hash.clone(),
            index.to_string(),
            kind.to_string(),
            stats.total_reward.to_string(),
            steps.to_string(),
            stats.planner_calls.to_string(),
        ])?;
        w.flush()?;
        data.push(ep)
    };

    for i in 0..cfg.seed_episodes {
        let (ep, stats) = collect_episode(env.as_mut(), &Policy::Random, cfg.action_repeat, 0.0, &streams.child("seed_episode", i as u64))?;
        store(&mut data, ep, &stats, "seed", &mut episode_csv)?;
    }

    let mut step = 0usize;
    let mut collected = 0usize;
    let mut planner_calls = 0usize;
    let mut last_checkpoint = save_checkpoint(&params, &cfg, out_dir, step, data.len())?;
    let mut test_returns = Vec::new();
    let max_d = cfg.objective.max_distance();
    while data.len() < cfg.total_episodes {
        for _ in 0..cfg.collect_interval {
            let mut rng = streams.stream("batch", step as u64);
            let batch = data.sample_chunks(cfg.batch_size, cfg.chunk_len, &mut rng)?;
            let noise = LossNoise::sample(
                &mut streams.stream("loss_noise", step as u64),
                cfg.chunk_len,
                cfg.batch_size,
                cfg.model.stoch_dim(),
                max_d,
            );
            let stats = match train_update(&cfg.model, &cfg.objective, &mut params, &batch, &noise, &adam, cfg.grad_clip) {
                Ok(s) => s,
                Err(Error::NonFinite(reason)) => {
                    train_csv.flush()?;
                    let checkpoint = save_checkpoint(&params, &cfg, out_dir, step, data.len())?;
                    return Err(Error::Diverged { step, reason, checkpoint });
                }
                Err(e) => return Err(e),
            };
            step += 1;
            let l = stats.loss;
            train_csv.write_record([
                hash.clone(),
                step.to_string(),
                data.len().to_string(),
                l.total.to_string(),
                l.reconstruction.to_string(),
                l.reward.to_string(),
                l.divergence.to_string(),
                stats.grad_norm.to_string(),
                (stats.clipped as u8).to_string(),
            ])?;
        }
        train_csv.flush()?;

        let policy = match cfg.collection {
            Collection::Random => Policy::Random,
            Collection::Planned => Policy::Planned {
                model: &cfg.model,
                params: &params,
                planner: &cfg.planner,
                method: cfg.planning,
            },
        };
        let stream = streams.child("collect", collected as u64);
        let (ep, stats) = collect_episode(env.as_mut(), &policy, cfg.action_repeat, cfg.exploration_noise, &stream)?;
        planner_calls += stats.planner_calls;
        store(&mut data, ep, &stats, "collect", &mut episode_csv)?;
        collected += 1;

        let done = data.len() >= cfg.total_episodes;
        if done || (cfg.checkpoint_every > 0 && collected % cfg.checkpoint_every == 0) {
            last_checkpoint = save_checkpoint(&params, &cfg, out_dir, step, data.len())?;
        }
        if done || (cfg.test_every > 0 && collected % cfg.test_every == 0) {
            test_returns = evaluate(&cfg, &params, cfg.test_episodes, &streams.child("test", step as u64))?;
            for (i, r) in test_returns.iter().enumerate() {
                test_csv.write_record([hash.clone(), step.to_string(), data.len().to_string(), i.to_string(), r.to_string()])?;
            }
            test_csv.flush()?;
        }
    }
    Ok(TrainSummary {
        updates: step,
        episodes: data.len(),
        final_checkpoint: last_checkpoint,
        test_returns,
        collection_planner_calls: planner_calls,
    })
}
