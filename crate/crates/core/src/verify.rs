//! The built-in check suite behind `planet verify`: gradient checks, the
//! distribution and Kalman oracles, objective identities, free nats, the
//! CEM oracle and run determinism. Each check reports its measured value.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{train, AgentConfig};
use crate::diffcore::{finite_diff_check, Bound, Graph, ParamStore, Tensor};
use crate::distributions::{kl_rows, DiagGaussian};
use crate::diagnostics::{planner_sweep, SweepGrid};
use crate::envs::{lingauss_episode, EnvConfig, LinGaussSpec};
use crate::error::Result;
use crate::models::{init_params, Activation, Family, LatentModel, ModelConfig};
use crate::objectives::{apply_free_nats, loss_graph, LossNoise, ObjectiveConfig, ObjectiveKind, SeqBatch};
use crate::oracle::{brute_force_best_sequence, elbo_exact_posterior, elbo_monte_carlo, exact_multistep_gap, kalman_loglik};
use crate::planner::{cem_plan, cem_plan_with_trace, quadratic_model, PlannerConfig, SequenceRewardModel};
use crate::rng::normals;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// The headline measurement (error, margin, count, ...).
    pub value: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, value: f64, detail: String) -> Self {
        Self { name: name.into(), passed, value, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// The small model used by the gradient checks: 4 stochastic and 8
/// deterministic units on 8×8 images.
pub fn toy_model(family: Family) -> ModelConfig {
    ModelConfig {
        family,
        stoch: 4,
        deter: 8,
        hidden: 6,
        activation: Activation::Elu,
        image_size: 8,
        channels: 3,
        cnn_depth: 2,
        std_floor: 0.1,
        action_dim: 2,
    }
}

pub fn toy_batch(cfg: &ModelConfig, steps: usize, batch: usize, seed: u64) -> Result<SeqBatch<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = steps * batch;
    let s = cfg.image_size;
    let obs: Vec<f64> = normals::<f64>(&mut rng, n * cfg.image_len()).iter().map(|x| 0.25 * x).collect();
    SeqBatch::new(
        Tensor::new(&[n, s, s, cfg.channels], obs)?,
        Tensor::new(&[n, cfg.action_dim], normals(&mut rng, n * cfg.action_dim))?,
        Tensor::new(&[n, 1], normals(&mut rng, n))?,
        steps,
        batch,
    )
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the objective, over every model family.
pub fn check_gradients() -> Result<CheckResult> {
    let objectives = [
        ("standard", ObjectiveConfig { free_nats: 0.0, ..Default::default() }, 3),
        // Stop-gradients change the analytic gradient but not the loss value,
        // so finite differences only agree with them switched off.
        ("dstep(d=2)", ObjectiveConfig { kind: ObjectiveKind::Dstep, distance: 2, free_nats: 0.0, stop_posterior_grad: false, ..Default::default() }, 3),
        // Overshooting to D = 3 needs chunks of at least 4 steps.
        ("overshooting(D=3)", ObjectiveConfig { kind: ObjectiveKind::Overshooting, distance: 3, free_nats: 0.0, beta: 0.7, stop_posterior_grad: false }, 4),
    ];
    let mut worst = (0.0f64, String::new());
    for fam in [Family::Rnn, Family::Ssm, Family::Rssm] {
        let cfg = toy_model(fam);
        let params: ParamStore<f64> = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1))?;
        for (name, oc, steps) in &objectives {
            let batch = toy_batch(&cfg, *steps, 2, 2)?;
            let noise = LossNoise::sample(&mut ChaCha8Rng::seed_from_u64(3), *steps, 2, cfg.stoch_dim(), oc.max_distance());
            let r = finite_diff_check(&params, 1e-4, 3, |g, b: &Bound| {
                let m = LatentModel::new(&cfg, g, b)?;
                Ok(loss_graph(&m, &batch, &noise, oc)?.total)
            })?;
            if r.max_rel_error >= worst.0 {
                worst = (r.max_rel_error, format!("{fam}/{name}"));
            }
        }
    }
    Ok(CheckResult::new(
        "gradients",
        worst.0 < 1e-4,
        worst.0,
        format!("max relative error {:.2e} (worst {}) < 1e-4", worst.0, worst.1),
    ))
}

/// Closed-form KL against sample averages of `ln q − ln p`.
pub fn check_kl(pairs: usize, samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_z = 0.0f64;
    let mut self_kl = 0.0f64;
    for _ in 0..pairs {
        let draw = |rng: &mut ChaCha8Rng| -> Result<DiagGaussian> {
            let mean = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let std = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
            DiagGaussian::new(mean, std)
        };
        let (q, p) = (draw(&mut rng)?, draw(&mut rng)?);
        let exact = q.kl(&p)?;
        self_kl = self_kl.max(q.kl(&q)?.abs());
        let (mut sum, mut sq) = (0.0, 0.0);
        let mut x = vec![0.0; 3];
        for _ in 0..samples {
            let e: Vec<f64> = normals(&mut rng, 3);
            for i in 0..3 {
                x[i] = q.mean[i] + q.std[i] * e[i];
            }
            let v = q.log_prob(&x)? - p.log_prob(&x)?;
            sum += v;
            sq += v * v;
        }
        let n = samples as f64;
        let mean = sum / n;
        let se = ((sq / n - mean * mean) / n).sqrt();
        worst_z = worst_z.max((mean - exact).abs() / se);
    }
    Ok(CheckResult::new(
        "kl_oracle",
        worst_z < 3.0 && self_kl == 0.0,
        worst_z,
        format!("{pairs} pairs x {samples} samples: worst |MC - exact| = {worst_z:.2} SE (< 3); max KL(q,q) = {self_kl}"),
    ))
}

/// The bound with exact filtering posteriors never exceeds the exact
/// log-likelihood; the sampled bound agrees within 3 standard errors.
pub fn check_bound(instances: usize, samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut min_gap = f64::INFINITY;
    let mut worst_z = f64::NEG_INFINITY;
    let mut worst_agree = 0.0f64;
    let mut ok = true;
    for i in 0..instances {
        let n = 1 + i % 3;
        let spec = LinGaussSpec::random(&mut rng, n, 1 + i % 2, 1, 0.9);
        let acts: Vec<DVector<f64>> = (0..9).map(|_| DVector::from_element(1, rng.random_range(-1.0..1.0))).collect();
        let ep = lingauss_episode(&spec, &acts, &mut rng)?;
        let k = kalman_loglik(&spec, &ep.obs, &acts)?;
        let elbo = elbo_exact_posterior(&spec, &ep.obs, &acts, &k)?;
        let mc = elbo_monte_carlo(&spec, &ep.obs, &acts, &k, samples, &mut rng)?;
        min_gap = min_gap.min(k.total - elbo);
        // Positive z means the sampled bound sits above the likelihood.
        let z = (mc.mean - k.total) / mc.se;
        worst_z = worst_z.max(z);
        worst_agree = worst_agree.max((mc.mean - elbo).abs() / mc.se);
        ok &= elbo <= k.total && z <= 3.0;
    }
    Ok(CheckResult::new(
        "bound_sanity",
        ok,
        min_gap,
        format!("{instances} instances (T=10): min(loglik - ELBO) = {min_gap:.3e} >= 0; worst MC excess {worst_z:.2} SE (<= 3); MC vs closed form within {worst_agree:.2} SE"),
    ))
}

/// `dstep(d=1)` and `overshooting(D=1)` equal the standard objective.
pub fn check_reductions() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for fam in [Family::Rnn, Family::Ssm, Family::Rssm] {
        let cfg = toy_model(fam);
        let params: ParamStore<f64> = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(4))?;
        let batch = toy_batch(&cfg, 4, 3, 5)?;
        let noise = LossNoise::sample(&mut ChaCha8Rng::seed_from_u64(6), 4, 3, cfg.stoch_dim(), 1);
        let value = |oc: &ObjectiveConfig| -> Result<f64> {
            let g = Graph::<f64>::inference();
            let b = params.bind(&g);
            let m = LatentModel::new(&cfg, &g, &b)?;
            Ok(loss_graph(&m, &batch, &noise, oc)?.breakdown(&g)?.total)
        };
        let std = value(&ObjectiveConfig::default())?;
        for kind in [ObjectiveKind::Dstep, ObjectiveKind::Overshooting] {
            let v = value(&ObjectiveConfig { kind, distance: 1, ..Default::default() })?;
            worst = worst.max((v - std).abs() / std.abs().max(1e-12));
        }
    }
    Ok(CheckResult::new(
        "reductions",
        worst <= 1e-6,
        worst,
        format!("max relative difference to the standard objective {worst:.2e} <= 1e-6"),
    ))
}

/// `E[ln p_d] < E[ln p_1]` by more than 3 standard errors for `d ∈ {2, 4}`.
pub fn check_data_processing(instances: usize, episodes: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut worst = f64::INFINITY;
    for i in 0..instances {
        let spec = LinGaussSpec::random(&mut rng, 1 + i % 3, 1 + i % 2, 1, 0.8);
        for d in [2, 4] {
            let g = exact_multistep_gap(&spec, d, 10, episodes, &mut rng)?;
            worst = worst.min(g.mc_gap.mean / g.mc_gap.se);
        }
    }
    Ok(CheckResult::new(
        "data_processing",
        worst > 3.0,
        worst,
        format!("{instances} contractive instances, d in {{2,4}}: smallest margin {worst:.1} SE (> 3)"),
    ))
}

/// Gradient of the clipped divergence at chosen KL values (threshold 3).
pub fn check_free_nats() -> Result<CheckResult> {
    let mut details = Vec::new();
    let mut ok = true;
    for kl in [1.0f64, 3.0 - 1e-3, 3.0 + 1e-3, 10.0] {
        // KL(N(μ, 1) || N(0, 1)) = μ²/2.
        let mu = (2.0 * kl).sqrt();
        let g = Graph::<f64>::new();
        let m = g.param(Tensor::new(&[1, 1], vec![mu])?);
        let one = g.input(Tensor::full(&[1, 1], 1.0));
        let zero = g.input(Tensor::zeros(&[1, 1]));
        let div = apply_free_nats(&g, kl_rows(&g, m, one, zero, one), 3.0);
        let grads = g.backward(g.sum(div));
        let d = grads.get(m).map_or(0.0, |v| v[0]);
        let want_zero = kl < 3.0;
        ok &= if want_zero { d == 0.0 } else { d != 0.0 };
        details.push(format!("KL={kl}: grad={d:.3e}"));
    }
    Ok(CheckResult::new("free_nats", ok, 0.0, details.join(", ")))
}

/// CEM on the quadratic toy reward over 20 seeds, and against exhaustive
/// search on random smooth rewards.
pub fn check_cem() -> Result<CheckResult> {
    let cfg = PlannerConfig { horizon: 1, ..Default::default() };
    let model = quadratic_model(1, 0.3);
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let a = cem_plan(&model, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        worst = worst.max((a[0] - 0.3).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut cells = 0.0f64;
    for _ in 0..5 {
        let c: Vec<f64> = (0..2).map(|_| rng.random_range(-0.7..0.7)).collect();
        let w: Vec<f64> = (0..2).map(|_| rng.random_range(1.0..3.0)).collect();
        let ph: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..6.0)).collect();
        let reward = move |a: &[f64]| (0..2).map(|i| -w[i] * (a[i] - c[i]).powi(2) + 0.05 * (4.0 * a[i] + ph[i]).sin()).sum::<f64>();
        let brute = brute_force_best_sequence(&reward, 2, 1, 41, -1.0, 1.0)?;
        let trace = cem_plan_with_trace(&SequenceRewardModel { action_dim: 1, reward: &reward }, &cfg, &mut rng)?;
        let mean = &trace.iterations.last().expect("iterations >= 1").mean;
        for i in 0..2 {
            cells = cells.max((mean[i] - brute.actions[i]).abs() / brute.cell);
        }
    }
    Ok(CheckResult::new(
        "cem_oracle",
        worst <= 0.05 && cells <= 2.0,
        worst,
        format!("quadratic optimum error {worst:.4} <= 0.05 over 20 seeds; max distance to grid optimum {cells:.2} cells <= 2"),
    ))
}

/// CEM with the default planner settings on a perfect copy of the pendulum.
pub fn check_true_dynamics_pendulum(episodes: usize) -> Result<CheckResult> {
    let env = EnvConfig { name: "pendulum".into(), ..Default::default() };
    let grid = SweepGrid { episodes, ..Default::default() };
    let row = planner_sweep(&env, &grid)?.remove(0);
    Ok(CheckResult::new(
        "cem_true_dynamics",
        row.median >= 160.0,
        row.median,
        format!("pendulum median return over {episodes} episodes {:.1} >= 160 (mean {:.1})", row.median, row.mean),
    ))
}

/// A tiny training run repeated from its own `config.json` must reproduce
/// episode files and checkpoints byte for byte.
pub fn check_determinism(scratch: &Path) -> Result<CheckResult> {
    let cfg = AgentConfig {
        env: EnvConfig { name: "pendulum".into(), image_size: 8, episode_len: 16 },
        model: ModelConfig { stoch: 3, deter: 6, hidden: 8, cnn_depth: 2, ..Default::default() },
        planner: PlannerConfig { horizon: 3, iterations: 2, candidates: 16, top_k: 4, ..Default::default() },
        seed_episodes: 1,
        collect_interval: 2,
        batch_size: 2,
        chunk_len: 4,
        total_episodes: 3,
        test_episodes: 1,
        ..Default::default()
    }
    .resolve()?;
    let (a, b) = (scratch.join("run_a"), scratch.join("run_b"));
    train(&cfg, &a)?;
    let rerun = crate::config::load_agent_config(&a.join("config.json"), &[])?;
    train(&rerun, &b)?;
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["episodes", "checkpoints"] {
        let mut names: Vec<_> = fs::read_dir(a.join(sub))?.map(|e| e.map(|e| e.file_name())).collect::<std::io::Result<_>>()?;
        names.sort();
        for n in names {
            compared += 1;
            let other = fs::read(b.join(sub).join(&n)).unwrap_or_default();
            if fs::read(a.join(sub).join(&n))? != other {
                differing.push(format!("{sub}/{}", n.to_string_lossy()));
            }
        }
    }
    Ok(CheckResult::new(
        "determinism",
        differing.is_empty() && compared > 0,
        differing.len() as f64,
        format!("{compared} files compared, {} differ {:?}", differing.len(), differing),
    ))
}

/// Runs the suite; `scratch` receives the determinism runs.
pub fn run_all(scratch: &Path) -> Vec<CheckResult> {
    let checks: Vec<(&str, Box<dyn Fn() -> Result<CheckResult>>)> = vec![
        ("gradients", Box::new(check_gradients)),
        ("kl_oracle", Box::new(|| check_kl(50, 1_000_000))),
        ("bound_sanity", Box::new(|| check_bound(20, 10_000))),
        ("reductions", Box::new(check_reductions)),
        ("data_processing", Box::new(|| check_data_processing(5, 10_000))),
        ("free_nats", Box::new(check_free_nats)),
        ("cem_oracle", Box::new(check_cem)),
        ("cem_true_dynamics", Box::new(|| check_true_dynamics_pendulum(10))),
        ("determinism", Box::new(|| check_determinism(scratch))),
    ];
    checks
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| CheckResult::new(name, false, f64::NAN, format!("error: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_checks_pass() {
        for r in [check_reductions(), check_free_nats(), check_cem(), check_kl(3, 20_000)] {
            let r = r.unwrap();
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn gradient_check_passes() {
        let r = check_gradients().unwrap();
        assert!(r.passed, "{}", r.line());
    }

    #[test]
    fn failure_lines_are_marked() {
        let r = CheckResult::new("x", false, 1.0, "bad".into());
        assert_eq!(r.line(), "FAIL x: bad");
    }
}
