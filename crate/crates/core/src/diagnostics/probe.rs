use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::diagnostics_dir;
use crate::agent::AgentConfig;
use crate::diffcore::{AdamConfig, Graph, ParamStore, Tensor};
use crate::envs::{preprocess, EpisodeRecord};
use crate::error::{Error, Result};
use crate::models::{filter_sequence, rollout_prior, stack_states, LatentModel, LatentVar, SequenceModel};
use crate::rng::{normals, StreamRng};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOptions {
    pub hidden: usize,
    pub train_steps: usize,
    pub batch: usize,
    /// Longest open-loop distance to evaluate.
    pub max_horizon: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            hidden: 64,
            train_steps: 1500,
            batch: 128,
            max_horizon: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeScore {
    /// Held-out R² per target.
    pub r2: Vec<f64>,
    /// Held-out MSE of standardized targets.
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub targets: Vec<String>,
    pub latent: ProbeScore,
    /// Baseline regressor on raw (preprocessed, flattened) pixels.
    pub pixels: ProbeScore,
    /// Standardized-target MSE of the latent probe applied to states
    /// predicted `k` steps open-loop, `k = 0..=max_horizon` (0 is closed-loop).
    pub open_loop_mse: Vec<f64>,
    pub train_rows: usize,
    pub test_rows: usize,
}

impl ProbeReport {
    pub fn r2_of(&self, target: &str) -> Option<f64> {
        self.targets.iter().position(|t| t == target).map(|i| self.latent.r2[i])
    }
}

/// Regression targets for frame `f` of an episode: a continuous encoding
/// of the simulator state plus the reward received on arrival.
pub fn probe_targets(ep: &EpisodeRecord, f: usize) -> Result<(Vec<String>, Vec<f64>)> {
    let s = ep
        .state(f)
        .ok_or_else(|| Error::InsufficientData("episode has no ground-truth states".into()))?;
    let s: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    let reward = if f == 0 { 0.0 } else { ep.rewards[f - 1] as f64 };
    let (mut names, mut vals): (Vec<String>, Vec<f64>) = match ep.env.as_str() {
        // The angle wraps, so regress its sine and cosine.
        "pendulum" => (
            ["sin_theta", "cos_theta", "theta_dot"].map(String::from).to_vec(),
            vec![s[0].sin(), s[0].cos(), s[1]],
        ),
        "goal" => (["x", "y", "vx", "vy", "goal_x", "goal_y"].map(String::from).to_vec(), s),
        _ => ((0..s.len()).map(|i| format!("state{i}")).collect(), s),
    };
    names.push("reward".into());
    vals.push(reward);
    Ok((names, vals))
}

struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-6))
            .collect();
        Self { mean, std }
    }

    fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.std[j]).collect())
            .collect()
    }
}

/// Two-layer ReLU regressor trained with Adam on standardized data.
struct Regressor {
    params: ParamStore<f32>,
    x_norm: Standardizer,
}

impl Regressor {
    fn fit(x: &[Vec<f64>], y: &[Vec<f64>], opts: &ProbeOptions, rng: &mut StreamRng) -> Result<Self> {
        let (din, dout) = (x[0].len(), y[0].len());
        let mut params = ParamStore::new();
        for (name, i, o) in [("h1", din, opts.hidden), ("out", opts.hidden, dout)] {
            let sd = 1.0 / (i as f64).sqrt();
            let w: Vec<f32> = (0..i * o).map(|_| (rng.sample::<f64, _>(StandardNormal) * sd) as f32).collect();
            params.insert(format!("{name}/w"), Tensor::new(&[i, o], w)?)?;
            params.insert(format!("{name}/b"), Tensor::zeros(&[o]))?;
        }
        let x_norm = Standardizer::fit(x);
        let xs = x_norm.apply(x);
        let adam = AdamConfig::default();
        let bs = opts.batch.min(xs.len());
        for _ in 0..opts.train_steps {
            let idx: Vec<usize> = (0..bs).map(|_| rng.random_range(0..xs.len())).collect();
            let xb = Tensor::new(&[bs, din], idx.iter().flat_map(|&i| xs[i].iter().map(|&v| v as f32)).collect())?;
            let yb = Tensor::new(&[bs, dout], idx.iter().flat_map(|&i| y[i].iter().map(|&v| v as f32)).collect())?;
            let g = Graph::<f32>::new();
            let b = params.bind(&g);
            let pred = Self::forward(&g, &b, g.input(xb))?;
            let loss = g.mean(g.square(g.sub(pred, g.input(yb))));
            let grads = g.backward(loss);
            let named = b.grads(&g, &grads);
            params.adam_step(&named, &adam)?;
        }
        Ok(Self { params, x_norm })
    }

    fn forward(g: &Graph<f32>, b: &crate::diffcore::Bound, x: crate::diffcore::Var) -> Result<crate::diffcore::Var> {
        let h = g.relu(g.linear(x, b.var("h1/w")?, Some(b.var("h1/b")?)));
        Ok(g.linear(h, b.var("out/w")?, Some(b.var("out/b")?)))
    }

    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let xs = self.x_norm.apply(x);
        let din = xs[0].len();
        let g = Graph::<f32>::inference();
        let b = self.params.bind(&g);
        let input = Tensor::new(&[xs.len(), din], xs.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect())?;
        let out = g.tensor(Self::forward(&g, &b, g.input(input))?);
        let d = out.row_len();
        Ok(out.data().chunks(d).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    }
}

fn score(pred: &[Vec<f64>], y: &[Vec<f64>]) -> ProbeScore {
    let d = y[0].len();
    let n = y.len() as f64;
    let r2 = (0..d)
        .map(|j| {
            let mean = y.iter().map(|r| r[j]).sum::<f64>() / n;
            let sst: f64 = y.iter().map(|r| (r[j] - mean).powi(2)).sum();
            let sse: f64 = y.iter().zip(pred).map(|(r, p)| (r[j] - p[j]).powi(2)).sum();
            if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN }
        })
        .collect();
    ProbeScore { r2, mse: mse(pred, y) }
}

fn mse(pred: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let total: f64 = y.iter().zip(pred).flat_map(|(r, p)| r.iter().zip(p).map(|(a, b)| (a - b).powi(2))).sum();
    total / (y.len() * y[0].len()) as f64
}

struct EpisodeLatents {
    /// Decoder features per frame `1..=steps`.
    features: Vec<Vec<f64>>,
    /// Open-loop features: `open[k−1][i]` predicts frame `i + 1 + k` from the
    /// filtered state at frame `i + 1`.
    open: Vec<Vec<Vec<f64>>>,
}

fn rows_of(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let d = t.row_len();
    t.data().chunks(d).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

fn latents(cfg: &AgentConfig, params: &ParamStore<f32>, ep: &EpisodeRecord, max_k: usize, rng: &mut StreamRng) -> Result<EpisodeLatents> {
    let m_cfg = &cfg.model;
    let g = Graph::<f32>::inference();
    let b = params.bind(&g);
    let m = LatentModel::new(m_cfg, &g, &b)?;
    let n = ep.steps();
    let size = ep.image_size;
    let obs: Vec<f32> = (1..=n).flat_map(|f| preprocess::<f32>(ep.frame(f))).collect();
    let acts: Vec<f32> = ep.actions.clone();
    let acts = Tensor::new(&[n, ep.action_dim], acts)?;
    let nd = m.noise_dim();
    let mut noise = |rows: usize| -> Result<Option<crate::diffcore::Var>> {
        Ok((nd > 0).then(|| g.input(Tensor::new(&[rows, nd], normals(rng, rows * nd)).expect("shape"))))
    };
    let embeds = m.embed(g.input(Tensor::new(&[n, size, size, 3], obs)?))?;
    let filt = filter_sequence(&m, &m.initial_state(1), embeds, g.input(acts.clone()), noise(n)?, n)?;
    let all = stack_states(&g, &filt.states)?;
    let features = rows_of(&g.tensor(m.features(&all)?));

    let mut open = Vec::new();
    let starts = n.saturating_sub(max_k);
    if max_k > 0 && starts > 0 {
        // Roll every start frame forward together; row i starts at frame i + 1.
        let start_state = LatentVar {
            h: all.h.map(|h| g.slice_rows(h, 0, starts)),
            s: all.s.map(|s| g.slice_rows(s, 0, starts)),
        };
        let a = ep.action_dim;
        let mut rows = Vec::with_capacity(max_k * starts * a);
        for k in 1..=max_k {
            for i in 0..starts {
                // Frame i + 1 + k was reached with action index i + k.
                rows.extend_from_slice(&acts.data()[(i + k) * a..(i + k + 1) * a]);
            }
        }
        let act_var = g.input(Tensor::new(&[max_k * starts, a], rows)?);
        let roll = rollout_prior(&m, &start_state, act_var, noise(max_k * starts)?, max_k)?;
        for (s, _) in roll {
            open.push(rows_of(&g.tensor(m.features(&s)?)));
        }
    }
    Ok(EpisodeLatents { features, open })
}

/// Fits probes from filtered latents (and, as a baseline, from raw pixels)
/// to simulator-state targets. Episodes with index ≡ 4 (mod 5) form the
/// held-out split. The model parameters are only read.
pub fn probe_states(cfg: &AgentConfig, params: &ParamStore<f32>, episodes: &[EpisodeRecord], opts: &ProbeOptions) -> Result<ProbeReport> {
    if episodes.len() < 2 {
        return Err(Error::InsufficientData("probing needs at least two episodes".into()));
    }
    let is_test = |i: usize| if episodes.len() < 5 { i + 1 == episodes.len() } else { i % 5 == 4 };
    let mut rng = StreamRng::seed_from_u64(opts.seed);
    let mut names = Vec::new();
    let (mut xtr, mut ptr, mut ytr) = (Vec::new(), Vec::new(), Vec::new());
    let (mut xte, mut pte, mut yte) = (Vec::new(), Vec::new(), Vec::new());
    let mut open_x: Vec<Vec<Vec<f64>>> = vec![Vec::new(); opts.max_horizon];
    let mut open_y: Vec<Vec<Vec<f64>>> = vec![Vec::new(); opts.max_horizon];
    for (i, ep) in episodes.iter().enumerate() {
        let lat = latents(cfg, params, ep, if is_test(i) { opts.max_horizon } else { 0 }, &mut rng)?;
        for f in 1..=ep.steps() {
            let (n, y) = probe_targets(ep, f)?;
            names = n;
            let px: Vec<f64> = preprocess(ep.frame(f));
            if is_test(i) {
                xte.push(lat.features[f - 1].clone());
                pte.push(px);
                yte.push(y);
            } else {
                xtr.push(lat.features[f - 1].clone());
                ptr.push(px);
                ytr.push(y);
            }
        }
        for (k, rows) in lat.open.iter().enumerate() {
            for (i0, feat) in rows.iter().enumerate() {
                open_x[k].push(feat.clone());
                open_y[k].push(probe_targets(ep, i0 + 2 + k)?.1);
            }
        }
    }
    if xtr.is_empty() || xte.is_empty() {
        return Err(Error::InsufficientData("empty train or test split".into()));
    }
    let y_norm = Standardizer::fit(&ytr);
    let (ytr_s, yte_s) = (y_norm.apply(&ytr), y_norm.apply(&yte));
    let latent_probe = Regressor::fit(&xtr, &ytr_s, opts, &mut rng)?;
    let latent = score(&latent_probe.predict(&xte)?, &yte_s);
    let pixel_probe = Regressor::fit(&ptr, &ytr_s, opts, &mut rng)?;
    let pixels = score(&pixel_probe.predict(&pte)?, &yte_s);
    let mut open_loop_mse = vec![latent.mse];
    for k in 0..opts.max_horizon {
        if open_x[k].is_empty() {
            break;
        }
        open_loop_mse.push(mse(&latent_probe.predict(&open_x[k])?, &y_norm.apply(&open_y[k])));
    }
    Ok(ProbeReport {
        targets: names,
        latent,
        pixels,
        open_loop_mse,
        train_rows: xtr.len(),
        test_rows: xte.len(),
    })
}

/// Writes `probe_r2.csv` and `probe_horizon.csv`.
pub fn write_probe(report: &ProbeReport, out_dir: &Path, config_hash: &str) -> Result<(PathBuf, PathBuf)> {
    let dir = diagnostics_dir(out_dir)?;
    let r2_path = dir.join("probe_r2.csv");
    let mut w = csv::Writer::from_path(&r2_path)?;
    w.write_record(["config_hash", "target", "latent_r2", "pixels_r2"])?;
    for (i, t) in report.targets.iter().enumerate() {
        w.write_record([config_hash, t, &report.latent.r2[i].to_string(), &report.pixels.r2[i].to_string()])?;
    }
    w.flush()?;
    let h_path = dir.join("probe_horizon.csv");
    let mut w = csv::Writer::from_path(&h_path)?;
    w.write_record(["config_hash", "horizon", "mse"])?;
    for (k, e) in report.open_loop_mse.iter().enumerate() {
        w.write_record([config_hash, &k.to_string(), &e.to_string()])?;
    }
    w.flush()?;
    Ok((r2_path, h_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regressor_recovers_a_smooth_function() {
        let mut rng = StreamRng::seed_from_u64(0);
        let x: Vec<Vec<f64>> = (0..600).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] - 0.5 * r[1], (r[0]).sin()]).collect();
        let opts = ProbeOptions { hidden: 32, train_steps: 1500, batch: 64, ..Default::default() };
        let reg = Regressor::fit(&x[..500], &y[..500], &opts, &mut rng).unwrap();
        let s = score(&reg.predict(&x[500..]).unwrap(), &y[500..]);
        assert!(s.r2.iter().all(|&r| r > 0.95), "{:?}", s.r2);
    }

    #[test]
    fn r2_examples() {
        let y = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(score(&y, &y).r2, vec![1.0]);
        let mean = vec![vec![2.0]; 3];
        assert_eq!(score(&mean, &y).r2, vec![0.0]);
    }
}
