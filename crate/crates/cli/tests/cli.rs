use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn planet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planet"))
        .args(args)
        .env_remove("PLANET_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"{
  "seed": 5,
  "env.name": "pendulum",
  "env.image_size": 8,
  "env.episode_len": 16,
  "model.stoch": 3,
  "model.deter": 6,
  "model.hidden": 8,
  "model.cnn_depth": 2,
  "planner.horizon": 3,
  "planner.iterations": 2,
  "planner.candidates": 16,
  "planner.top_k": 4,
  "seed_episodes": 2,
  "collect_interval": 2,
  "batch_size": 2,
  "chunk_len": 4,
  "total_episodes": 3,
  "checkpoint_every": 1,
  "test_every": 0,
  "test_episodes": 2
}"#;

fn train_tiny(dir: &Path) -> String {
    let cfg = dir.join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.join("run");
    let o = planet(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("final checkpoint: ")).unwrap().to_string();
    line.trim_start_matches("final checkpoint: ").to_string()
}

#[test]
fn help_documents_every_flag() {
    let o = planet(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for word in ["--seed", "--set", "--out", "PLANET_OUT", "train", "eval", "predict", "probe", "sweep", "verify"] {
        assert!(text.contains(word), "help lacks {word}");
    }
    let o = planet(&["predict", "--help"]);
    for word in ["--checkpoint", "--episode", "--context", "--horizon"] {
        assert!(stdout(&o).contains(word), "predict help lacks {word}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let o = planet(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));

    let o = planet(&["train", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"), "{}", stderr(&o));

    let o = planet(&["train", "--config", "/nonexistent/cfg.json", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));

    let o = planet(&["bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_config_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("run");
    let args = ["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let o = planet(&[&args[..], &["--set", "model.nonexistent=3"]].concat());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("model.nonexistent"));
    let o = planet(&[&args[..], &["--set", "batch_size=0"]].concat());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_out_dir_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, TINY).unwrap();
    let o = planet(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("envout");
    let o = Command::new(env!("CARGO_BIN_EXE_planet"))
        .args(["train", "--config", cfg.to_str().unwrap(), "--set", "total_episodes=2"])
        .env("PLANET_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("config.json").exists());
}

#[test]
fn train_eval_predict_probe_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    let run = dir.path().join("run");
    for f in ["config.json", "metrics/train.csv", "episodes/000003.bin"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let o = planet(&["eval", "--checkpoint", &ckpt, "--env", "pendulum", "--episodes", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let printed: Vec<f64> = text
        .lines()
        .filter(|l| l.starts_with("episode "))
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(printed.len(), 3);
    let mean: f64 = text.lines().find(|l| l.starts_with("mean: ")).unwrap()[6..].parse().unwrap();
    assert!((mean - printed.iter().sum::<f64>() / 3.0).abs() < 1e-9);
    let mut rd = csv::Reader::from_path(run.join("metrics/eval.csv")).unwrap();
    let from_csv: Vec<f64> = rd.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(from_csv, printed);

    let o = planet(&["eval", "--checkpoint", &ckpt, "--env", "goal"]);
    assert_eq!(o.status.code(), Some(1), "action spaces differ: {}", stderr(&o));

    let ep = run.join("episodes/000001.bin");
    let o = planet(&["predict", "--checkpoint", &ckpt, "--episode", ep.to_str().unwrap(), "--context", "3", "--horizon", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.join("diagnostics/open_loop.ppm").exists());
    assert!(run.join("diagnostics/open_loop_mse.csv").exists());
    let o = planet(&["predict", "--checkpoint", &ckpt, "--episode", ep.to_str().unwrap(), "--horizon", "100"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = planet(&["probe", "--checkpoint", &ckpt, "--data", run.join("episodes").to_str().unwrap(), "--steps", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("sin_theta"));
    assert!(run.join("diagnostics/probe_r2.csv").exists());

    let o = planet(&["eval", "--checkpoint", "/nonexistent/step_1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rerun_from_written_config_is_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    train_tiny(dir.path());
    let a = dir.path().join("run");
    let b = dir.path().join("rerun");
    let o = planet(&["train", "--config", a.join("config.json").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for sub in ["episodes", "checkpoints"] {
        for e in fs::read_dir(a.join(sub)).unwrap() {
            let name = e.unwrap().file_name();
            assert_eq!(fs::read(a.join(sub).join(&name)).unwrap(), fs::read(b.join(sub).join(&name)).unwrap(), "{name:?}");
        }
    }
    assert_eq!(fs::read(a.join("config.json")).unwrap(), fs::read(b.join("config.json")).unwrap());
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    train_tiny(dir.path());
    let cfg = dir.path().join("tiny.json");
    let out = dir.path().join("seeded");
    let o = planet(&["--seed", "99", "train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let written = fs::read_to_string(out.join("config.json")).unwrap();
    assert!(written.contains("\"seed\": 99"), "{written}");
    assert_ne!(
        fs::read(out.join("episodes/000001.bin")).unwrap(),
        fs::read(dir.path().join("run/episodes/000001.bin")).unwrap()
    );
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    fs::write(&grid, r#"{"horizon": [2, 3], "iterations": [2], "candidates": [20], "top_k": [5], "episodes": 1}"#).unwrap();
    let out = dir.path().join("sweep");
    let o = planet(&["sweep", "--env", "pendulum", "--grid", grid.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("H=")).count(), 2);
    let rows = fs::read_to_string(out.join("diagnostics/planner_sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);

    let o = planet(&["sweep", "--env", "nowhere", "--grid", grid.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn verify_prints_a_pass_line_per_check() {
    let o = planet(&["verify"]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}{}", stderr(&o));
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")).collect();
    assert_eq!(lines.len(), 9, "{text}");
    assert!(lines.iter().all(|l| l.starts_with("PASS ")), "{text}");
    for name in ["gradients", "kl_oracle", "bound_sanity", "reductions", "data_processing", "free_nats", "cem_oracle", "cem_true_dynamics", "determinism"] {
        assert!(text.contains(&format!("PASS {name}:")), "{name}");
    }
}
