//! `planet`: train, evaluate and inspect latent-dynamics planning agents.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use planet_core::agent::{evaluate, load_checkpoint, train, AgentConfig};
use planet_core::diffcore::{checkpoint_paths, ParamStore};
use planet_core::config::{build, load_agent_config, parse_override};
use planet_core::diagnostics::{
    open_loop_predict, planner_sweep, probe_states, write_open_loop, write_probe, write_sweep, ProbeOptions, SweepGrid,
};
use planet_core::envs::{read_episode, EnvConfig};
use planet_core::models::check_params;
use planet_core::rng::RngStreams;
use planet_core::{verify, Error};

#[derive(Parser, Debug)]
#[command(name = "planet", version, about = "Latent-dynamics models and CEM planning from pixels")]
struct Cli {
    /// Root seed; overrides the seed stored in config files and checkpoints.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Config override `dotted.key=value`, applied after the config file (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Output directory.
    #[arg(long, global = true, env = "PLANET_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an agent; writes config.json, episodes, checkpoints and metrics under --out.
    Train {
        /// Flat dotted-key JSON config file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run test episodes without exploration noise; writes metrics/eval.csv.
    Eval {
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Environment name (must match the checkpoint's action space).
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Open-loop video prediction on a recorded episode.
    Predict {
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Episode file (`.bin`) written by `train`.
        #[arg(long)]
        episode: PathBuf,
        /// Frames filtered before predicting.
        #[arg(long, default_value_t = 5)]
        context: usize,
        /// Frames predicted open loop.
        #[arg(long, default_value_t = 45)]
        horizon: usize,
    },
    /// Fit regression probes from model states to the true simulator state.
    Probe {
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Directory of episode files.
        #[arg(long)]
        data: PathBuf,
        /// Hidden units of the probe network.
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        /// Probe training steps.
        #[arg(long, default_value_t = 1500)]
        steps: usize,
    },
    /// Sweep planner settings with the true simulator as the model.
    Sweep {
        /// Environment name.
        #[arg(long)]
        env: String,
        /// JSON grid: horizon, iterations, candidates, top_k (lists), episodes, action_repeat, seed.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Run the built-in oracle and property checks; prints one PASS/FAIL line each.
    Verify,
}

#[derive(Args, Debug)]
struct CheckpointArg {
    /// Checkpoint base path (`<run>/checkpoints/step_K`, with or without `.json`).
    #[arg(long)]
    checkpoint: PathBuf,
}

/// Failure category that decides the exit code.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let validation = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<Error>(),
                Some(
                    Error::Config(_)
                        | Error::OutOfRange(_)
                        | Error::ShapeMismatch { .. }
                        | Error::Dimension(_)
                        | Error::FamilyMismatch { .. }
                        | Error::UnknownParam(_)
                        | Error::InsufficientData(_)
                )
            )
        });
        if validation {
            Failure::Validation(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn validation(msg: String) -> Failure {
    Failure::Validation(anyhow!(msg))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>, Failure> {
    let mut out = cli.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = cli.seed {
        out.push(("seed".into(), Value::from(seed)));
    }
    Ok(out)
}

/// Strips a `.json`/`.bin` suffix so either file names the checkpoint.
fn checkpoint_base(p: &Path) -> PathBuf {
    checkpoint_paths(p).0.with_extension("")
}

/// The run directory a checkpoint belongs to (`<run>/checkpoints/step_K`).
fn run_dir(ckpt: &Path) -> PathBuf {
    ckpt.parent().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn load(cli: &Cli, ckpt: &CheckpointArg) -> Result<(PathBuf, ParamStore<f32>, AgentConfig), Failure> {
    let base = checkpoint_base(&ckpt.checkpoint);
    if !checkpoint_paths(&base).0.exists() {
        return Err(validation(format!("--checkpoint: no checkpoint at {}", base.display())));
    }
    let (params, cfg) = load_checkpoint(&base).with_context(|| format!("loading checkpoint {}", base.display()))?;
    let cfg: AgentConfig = build(Some(&serde_json::to_value(&cfg).map_err(Error::from)?), &overrides(cli)?)?;
    Ok((base, params, cfg))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train { config } => {
            if !config.exists() {
                return Err(validation(format!("--config: file {} does not exist", config.display())));
            }
            let out = cli
                .out
                .clone()
                .ok_or_else(|| validation("--out is required for train (or set PLANET_OUT)".into()))?;
            let cfg = load_agent_config(config, &overrides(&cli)?)?.resolve()?;
            let summary = train(&cfg, &out).with_context(|| format!("training into {}", out.display()))?;
            println!("updates: {}", summary.updates);
            println!("episodes: {}", summary.episodes);
            println!("final checkpoint: {}", summary.final_checkpoint.display());
            if !summary.test_returns.is_empty() {
                println!("last test mean return: {:.3}", mean(&summary.test_returns));
            }
        }
        Command::Eval { ckpt, env, episodes } => {
            let (base, params, mut cfg) = load(&cli, ckpt)?;
            if let Some(name) = env {
                cfg.env = EnvConfig { name: name.clone(), ..cfg.env.clone() };
            }
            let cfg = cfg.resolve()?;
            check_params(&cfg.model, &params).context("--env: environment does not match the checkpoint")?;
            if *episodes == 0 {
                return Err(validation("--episodes must be at least 1".into()));
            }
            let returns = evaluate(&cfg, &params, *episodes, &RngStreams::new(cfg.seed).child("eval", 0))?;
            let out = cli.out.clone().unwrap_or_else(|| run_dir(&base));
            let path = out.join("metrics").join("eval.csv");
            fs::create_dir_all(out.join("metrics")).map_err(Error::from)?;
            let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
            w.write_record(["config_hash", "checkpoint", "episode", "return"]).map_err(Error::from)?;
            let hash = cfg.config_hash();
            for (i, r) in returns.iter().enumerate() {
                println!("episode {i}: {r}");
                w.write_record([hash.clone(), base.display().to_string(), i.to_string(), r.to_string()])
                    .map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
            println!("mean: {}", mean(&returns));
            println!("wrote {}", path.display());
        }
        Command::Predict { ckpt, episode, context, horizon } => {
            let (base, params, cfg) = load(&cli, ckpt)?;
            if !episode.exists() {
                return Err(validation(format!("--episode: file {} does not exist", episode.display())));
            }
            let ep = read_episode(episode)?;
            let report = open_loop_predict(&cfg, &params, &ep, *context, *horizon, cfg.seed)?;
            let out = cli.out.clone().unwrap_or_else(|| run_dir(&base));
            let (ppm, csv) = write_open_loop(&report, &out, &cfg.config_hash())?;
            let mut ks = vec![1, 5, 10, 20, *horizon];
            ks.sort_unstable();
            ks.dedup();
            for k in ks {
                if let Some(m) = report.open_loop_mse(k) {
                    println!("open-loop mse @{k}: {m:.6}");
                }
            }
            println!("wrote {} and {}", ppm.display(), csv.display());
        }
        Command::Probe { ckpt, data, hidden, steps } => {
            let (base, params, cfg) = load(&cli, ckpt)?;
            if !data.is_dir() {
                return Err(validation(format!("--data: {} is not a directory", data.display())));
            }
            let mut files: Vec<PathBuf> = fs::read_dir(data)
                .map_err(Error::from)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "bin"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(validation(format!("--data: no episode files in {}", data.display())));
            }
            let episodes = files.iter().map(|f| read_episode(f)).collect::<Result<Vec<_>, _>>()?;
            let opts = ProbeOptions { hidden: *hidden, train_steps: *steps, seed: cfg.seed, ..Default::default() };
            let report = probe_states(&cfg, &params, &episodes, &opts)?;
            let out = cli.out.clone().unwrap_or_else(|| run_dir(&base));
            let (r2, horizon) = write_probe(&report, &out, &cfg.config_hash())?;
            for (i, t) in report.targets.iter().enumerate() {
                println!("{t}: latent R2 {:.4}, pixel R2 {:.4}", report.latent.r2[i], report.pixels.r2[i]);
            }
            println!("wrote {} and {}", r2.display(), horizon.display());
        }
        Command::Sweep { env, grid } => {
            let doc = match grid {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("--grid: reading {}", p.display()))?;
                    Some(serde_json::from_str::<Value>(&text).map_err(|e| Error::Format { path: p.clone(), reason: e.to_string() })?)
                }
                None => None,
            };
            let grid: SweepGrid = build(doc.as_ref(), &overrides(&cli)?)?;
            let env_cfg = EnvConfig { name: env.clone(), ..Default::default() };
            let rows = planner_sweep(&env_cfg, &grid)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let path = write_sweep(&rows, &out, &grid.config_hash(&env_cfg))?;
            for r in &rows {
                println!(
                    "H={} I={} J={} K={}: mean {:.2} median {:.2}",
                    r.horizon, r.iterations, r.candidates, r.top_k, r.mean, r.median
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Verify => {
            let scratch = tempfile::tempdir().context("creating scratch directory").map_err(Failure::Runtime)?;
            let results = verify::run_all(scratch.path());
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                bail_validation(format!("{failed} of {} checks failed", results.len()))?;
            }
            println!("all {} checks passed", results.len());
        }
    }
    Ok(())
}

fn bail_validation(msg: String) -> Result<(), Failure> {
    Err(Failure::Validation(anyhow!(msg)))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}
