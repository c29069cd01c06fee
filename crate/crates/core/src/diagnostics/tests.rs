use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::*;
use crate::agent::{collect_episode, load_checkpoint, train, AgentConfig, Collection, PlanningMethod, Policy};
use crate::envs::{make_env, EnvConfig, EpisodeRecord};
use crate::models::{init_params, Activation, Family, ModelConfig};
use crate::planner::PlannerConfig;
use crate::rng::RngStreams;

fn tiny(family: Family) -> AgentConfig {
    AgentConfig {
        seed: 3,
        env: EnvConfig { name: "pendulum".into(), image_size: 8, episode_len: 40 },
        model: ModelConfig {
            family,
            stoch: 3,
            deter: 6,
            hidden: 8,
            activation: Activation::Relu,
            cnn_depth: 2,
            ..Default::default()
        },
        planner: PlannerConfig { horizon: 2, iterations: 2, candidates: 12, top_k: 3, ..Default::default() },
        seed_episodes: 1,
        collect_interval: 1,
        batch_size: 2,
        chunk_len: 4,
        total_episodes: 2,
        test_episodes: 1,
        ..Default::default()
    }
    .resolve()
    .unwrap()
}

fn random_episodes(cfg: &AgentConfig, n: usize) -> Vec<EpisodeRecord> {
    let mut env = make_env(&cfg.env).unwrap();
    (0..n)
        .map(|i| collect_episode(env.as_mut(), &Policy::Random, cfg.action_repeat, 0.0, &RngStreams::new(i as u64)).unwrap().0)
        .collect()
}

#[test]
fn ppm_layout() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ppm");
    write_ppm(&p, 2, 1, &[1, 2, 3, 4, 5, 6]).unwrap();
    assert_eq!(fs::read(&p).unwrap(), b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06");
}

#[test]
fn reconstruction_only_dump() {
    let cfg = tiny(Family::Rssm);
    let params = init_params::<f32>(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ep = &random_episodes(&cfg, 1)[0];
    let r = open_loop_predict(&cfg, &params, ep, 5, 0, 1).unwrap();
    assert_eq!(r.mse.len(), 5);
    assert_eq!(r.open_loop_mse(1), None);
    let dir = tempfile::tempdir().unwrap();
    let (ppm, csv) = write_open_loop(&r, dir.path(), "abc").unwrap();
    assert!(ppm.starts_with(dir.path().join("diagnostics")));
    let head = b"P6\n40 24\n255\n";
    assert_eq!(&fs::read(&ppm).unwrap()[..head.len()], head);
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().skip(1).all(|l| l.starts_with("abc,") && l.contains(",context,")));
}

#[test]
fn open_loop_shapes_and_errors() {
    let cfg = tiny(Family::Rssm);
    let params = init_params::<f32>(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ep = &random_episodes(&cfg, 1)[0];
    let r = open_loop_predict(&cfg, &params, ep, 5, 15, 1).unwrap();
    assert_eq!(r.mse.len(), 20);
    assert!(r.open_loop_mse(15).unwrap().is_finite());
    assert_eq!(r.truth.len(), 20 * 8 * 8 * 3);
    assert!(matches!(open_loop_predict(&cfg, &params, ep, 5, 16, 1), Err(crate::Error::InsufficientData(_))));
    assert!(open_loop_predict(&cfg, &params, ep, 0, 3, 1).is_err());
}

#[test]
fn deterministic_family_predictions_repeat_exactly() {
    let cfg = tiny(Family::Rnn);
    let params = init_params::<f32>(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ep = &random_episodes(&cfg, 1)[0];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = open_loop_predict(&cfg, &params, ep, 5, 10, 1).unwrap();
    let rb = open_loop_predict(&cfg, &params, ep, 5, 10, 2).unwrap();
    let (pa, ca) = write_open_loop(&ra, a.path(), "h").unwrap();
    let (pb, cb) = write_open_loop(&rb, b.path(), "h").unwrap();
    assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
    assert_eq!(fs::read(ca).unwrap(), fs::read(cb).unwrap());
}

#[test]
fn probe_report_contract() {
    let cfg = tiny(Family::Rssm);
    let params = init_params::<f32>(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let eps = random_episodes(&cfg, 5);
    let opts = ProbeOptions { hidden: 8, train_steps: 30, batch: 16, max_horizon: 3, seed: 0 };
    let r = probe_states(&cfg, &params, &eps, &opts).unwrap();
    assert_eq!(r.targets, vec!["sin_theta", "cos_theta", "theta_dot", "reward"]);
    assert_eq!((r.latent.r2.len(), r.pixels.r2.len()), (4, 4));
    assert_eq!(r.open_loop_mse.len(), 4);
    assert_eq!((r.train_rows, r.test_rows), (80, 20));
    let dir = tempfile::tempdir().unwrap();
    let (r2, h) = write_probe(&r, dir.path(), "hash").unwrap();
    assert_eq!(fs::read_to_string(r2).unwrap().lines().count(), 5);
    assert_eq!(fs::read_to_string(h).unwrap().lines().count(), 5);

    assert!(matches!(probe_states(&cfg, &params, &eps[..1], &opts), Err(crate::Error::InsufficientData(_))));
    let mut stateless = eps.clone();
    stateless[0].states.clear();
    assert!(probe_states(&cfg, &params, &stateless, &opts).is_err());
}

#[test]
fn single_cell_sweep() {
    let env = EnvConfig { name: "pendulum".into(), image_size: 8, episode_len: 20 };
    let grid = SweepGrid { horizon: vec![2], iterations: vec![2], candidates: vec![20], top_k: vec![5], episodes: 2, ..Default::default() };
    let rows = planner_sweep(&env, &grid).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].returns.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let p = write_sweep(&rows, dir.path(), &grid.config_hash(&env)).unwrap();
    assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 2);
    let two = SweepGrid { horizon: vec![1, 2], top_k: vec![5, 20], ..grid.clone() };
    assert_eq!(planner_sweep(&env, &two).unwrap().len(), 4);
    assert!(planner_sweep(&env, &SweepGrid { top_k: vec![50], ..grid }).is_err());
}

#[test]
fn ablation_harness() {
    assert_eq!(
        ablation_name(AgentConfig::default().model.family, AgentConfig::default().collection, AgentConfig::default().planning),
        "rssm-planned-cem"
    );
    let cfg = tiny(Family::Rssm);
    let dir = tempfile::tempdir().unwrap();
    let r = ablation_run(&cfg, Family::Ssm, Collection::Random, PlanningMethod::Shooting, dir.path()).unwrap();
    assert_eq!(r.name, "ssm-random-shooting");
    assert_eq!(r.summary.collection_planner_calls, 0);
    assert_eq!(r.config.model.family, Family::Ssm);
    assert!(dir.path().join("diagnostics/ablation/ssm-random-shooting/metrics/test.csv").exists());
}

#[test]
fn diagnostics_leave_checkpoints_untouched() {
    let cfg = tiny(Family::Rssm);
    let dir = tempfile::tempdir().unwrap();
    let s = train(&cfg, dir.path()).unwrap();
    let (json, bin) = crate::diffcore::checkpoint_paths(&s.final_checkpoint);
    let digest = || (Sha256::digest(fs::read(&json).unwrap()), Sha256::digest(fs::read(&bin).unwrap()));
    let before = digest();
    let (params, loaded) = load_checkpoint(&s.final_checkpoint).unwrap();
    let eps = random_episodes(&loaded, 5);
    let r = open_loop_predict(&loaded, &params, &eps[0], 5, 5, 0).unwrap();
    write_open_loop(&r, dir.path(), &loaded.config_hash()).unwrap();
    let opts = ProbeOptions { hidden: 4, train_steps: 5, batch: 8, max_horizon: 2, seed: 0 };
    probe_states(&loaded, &params, &eps, &opts).unwrap();
    assert_eq!(digest(), before);
}
