use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::{finite_diff_check, Graph, ParamStore, Tensor};
use crate::distributions::unit_log_prob_rows;
use crate::rng::normals;

pub(crate) fn toy_cfg(family: Family) -> ModelConfig {
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

fn params(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    init_params(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn image(cfg: &ModelConfig, n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.image_size;
    let data: Vec<f64> = normals::<f64>(&mut rng, n * cfg.image_len()).iter().map(|x| x * 0.2).collect();
    Tensor::new(&[n, s, s, cfg.channels], data).unwrap()
}

const FAMILIES: [Family; 3] = [Family::Rnn, Family::Ssm, Family::Rssm];

#[test]
fn embedding_shape_and_determinism() {
    for fam in FAMILIES {
        let cfg = toy_cfg(fam);
        let p = params(&cfg, 1);
        let run = |img: Tensor<f64>| {
            let g = Graph::<f64>::inference();
            let b = p.bind(&g);
            let m = LatentModel::new(&cfg, &g, &b).unwrap();
            let e = m.embed(g.input(img)).unwrap();
            g.tensor(e)
        };
        let zero = Tensor::zeros(&[1, 8, 8, 3]);
        let e1 = run(zero.clone());
        assert_eq!(e1.shape(), &[1, cfg.embed_dim()]);
        assert!(e1.all_finite());
        assert_eq!(e1, run(zero));
        let img = image(&cfg, 1, 3);
        let mut other = img.clone();
        other.data_mut()[17] += 0.5;
        assert_ne!(run(img), run(other));
    }
}

#[test]
fn wrong_image_shape_is_rejected() {
    let cfg = toy_cfg(Family::Rssm);
    let p = params(&cfg, 1);
    let g = Graph::<f64>::inference();
    let b = p.bind(&g);
    let m = LatentModel::new(&cfg, &g, &b).unwrap();
    assert!(m.embed(g.input(Tensor::<f64>::zeros(&[1, 4, 4, 3]))).is_err());
}

#[test]
fn zero_input_is_fixed_point_of_cell() {
    for fam in [Family::Rnn, Family::Rssm] {
        let cfg = toy_cfg(fam);
        let p = params(&cfg, 2);
        let g = Graph::<f64>::inference();
        let b = p.bind(&g);
        let m = LatentModel::new(&cfg, &g, &b).unwrap();
        let s0 = m.initial_state(3);
        let tr = m.prior_step(&s0, g.input(Tensor::zeros(&[3, 2]))).unwrap();
        assert!(g.tensor(tr.h.unwrap()).data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn prior_and_posterior_std_respect_floor() {
    for fam in [Family::Ssm, Family::Rssm] {
        let cfg = toy_cfg(fam);
        let p = params(&cfg, 4);
        let g = Graph::<f64>::inference();
        let b = p.bind(&g);
        let m = LatentModel::new(&cfg, &g, &b).unwrap();
        let s0 = m.initial_state(5);
        let a = g.input(Tensor::full(&[5, 2], 0.7));
        let tr = m.prior_step(&s0, a).unwrap();
        let e = m.embed(g.input(image(&cfg, 5, 9))).unwrap();
        let post = m.posterior_step(&s0, a, &tr, e).unwrap();
        for belief in [tr.prior, post] {
            assert_eq!(g.shape(belief.mean), vec![5, 4]);
            let std = g.tensor(belief.std.unwrap());
            assert!(std.data().iter().all(|&s| s >= 0.1));
        }
    }
}

#[test]
fn rnn_has_no_prior_distribution() {
    let cfg = toy_cfg(Family::Rnn);
    let p = params(&cfg, 4);
    let g = Graph::<f64>::inference();
    let b = p.bind(&g);
    let m = LatentModel::new(&cfg, &g, &b).unwrap();
    let tr = m.prior_step(&m.initial_state(1), g.input(Tensor::zeros(&[1, 2]))).unwrap();
    assert!(tr.prior.gauss().is_none());
    assert_eq!(m.noise_dim(), 0);
}

#[test]
fn feature_widths_follow_family() {
    for (fam, want) in [(Family::Rnn, 8), (Family::Ssm, 4), (Family::Rssm, 12)] {
        let cfg = toy_cfg(fam);
        let p = params(&cfg, 4);
        let g = Graph::<f64>::inference();
        let b = p.bind(&g);
        let m = LatentModel::new(&cfg, &g, &b).unwrap();
        let f = m.features(&m.initial_state(2)).unwrap();
        assert_eq!(g.shape(f), vec![2, want]);
        let img = m.decode_observation(&m.initial_state(2)).unwrap();
        assert_eq!(g.shape(img), vec![2, 8, 8, 3]);
        let r = m.decode_reward(&m.initial_state(2)).unwrap();
        assert_eq!(g.shape(r), vec![2, 1]);
    }
}

#[test]
fn reconstruction_log_prob_is_shifted_squared_error() {
    let cfg = toy_cfg(Family::Rssm);
    let p = params(&cfg, 5);
    let g = Graph::<f64>::inference();
    let b = p.bind(&g);
    let m = LatentModel::new(&cfg, &g, &b).unwrap();
    let dec = m.decode_observation(&m.initial_state(1)).unwrap();
    let target = image(&cfg, 1, 6);
    let d = cfg.image_len();
    let lp = unit_log_prob_rows(&g, g.reshape(dec, &[1, d]), g.input(target.clone().reshape(&[1, d]).unwrap()));
    let sq: f64 = g
        .tensor(dec)
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let c = d as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln();
    assert!((g.item(lp) - (-0.5 * sq - c)).abs() < 1e-9);
}

fn grad_ok(r: &crate::diffcore::GradCheckReport) {
    assert!(r.passes(1e-4), "worst {:?}", r.worst());
}

#[test]
fn gradients_of_prior_mean_wrt_action() {
    for fam in [Family::Ssm, Family::Rssm] {
        let cfg = toy_cfg(fam);
        let p = params(&cfg, 8);
        let mut ps = ParamStore::new();
        ps.insert("a", Tensor::new(&[2, 2], vec![0.3, -0.4, 0.8, 0.1]).unwrap()).unwrap();
        ps.insert("s", Tensor::new(&[2, 4], vec![0.1, 0.5, -0.2, 0.3, 0.0, 0.2, -0.6, 0.4]).unwrap())
            .unwrap();
        let r = finite_diff_check(&ps, 1e-5, 10, |g, inputs| {
            let b = p.bind(g);
            let m = LatentModel::new(&cfg, g, &b)?;
            let mut st = m.initial_state(2);
            st.s = Some(inputs.var("s")?);
            let tr = m.prior_step(&st, inputs.var("a")?)?;
            let w = g.input(Tensor::from_fn(&[2, 4], |i| 0.5 + i as f64 * 0.1));
            let rew = m.decode_reward(&m.commit(&tr, &tr.prior, Some(g.input(Tensor::full(&[2, 4], 0.3))))?)?;
            Ok(g.add(g.sum(g.mul(tr.prior.mean, w)), g.sum(rew)))
        })
        .unwrap();
        grad_ok(&r);
    }
}

#[test]
fn gradients_of_reconstruction_wrt_state() {
    let cfg = toy_cfg(Family::Rssm);
    let p = params(&cfg, 8);
    let target = image(&cfg, 2, 10);
    let mut ps = ParamStore::new();
    ps.insert("s", Tensor::from_fn(&[2, 4], |i| (i as f64 * 0.37).sin())).unwrap();
    ps.insert("h", Tensor::from_fn(&[2, 8], |i| (i as f64 * 0.21).cos() * 0.5)).unwrap();
    let r = finite_diff_check(&ps, 1e-5, 16, |g, inputs| {
        let b = p.bind(g);
        let m = LatentModel::new(&cfg, g, &b)?;
        let st = LatentVar {
            h: Some(inputs.var("h")?),
            s: Some(inputs.var("s")?),
        };
        let d = cfg.image_len();
        let dec = g.reshape(m.decode_observation(&st)?, &[2, d]);
        Ok(g.sum(unit_log_prob_rows(g, dec, g.input(target.clone().reshape(&[2, d]).unwrap()))))
    })
    .unwrap();
    grad_ok(&r);
}

struct Seq {
    obs: Tensor<f64>,
    actions: Tensor<f64>,
    noise: Tensor<f64>,
}

fn seq(cfg: &ModelConfig, steps: usize, n: usize, seed: u64) -> Seq {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.image_size;
    Seq {
        obs: image(cfg, steps * n, seed + 1).reshape(&[steps * n, s, s, cfg.channels]).unwrap(),
        actions: Tensor::new(&[steps * n, cfg.action_dim], normals(&mut rng, steps * n * cfg.action_dim)).unwrap(),
        noise: Tensor::new(&[steps * n, cfg.stoch], normals(&mut rng, steps * n * cfg.stoch)).unwrap(),
    }
}

fn run_filter(cfg: &ModelConfig, p: &ParamStore<f64>, sq: &Seq, steps: usize) -> Vec<LatentState<f64>> {
    let g = Graph::<f64>::inference();
    let b = p.bind(&g);
    let m = LatentModel::new(cfg, &g, &b).unwrap();
    let n = sq.obs.rows() / steps;
    let e = m.embed(g.input(sq.obs.clone())).unwrap();
    let out = filter_sequence(
        &m,
        &m.initial_state(n),
        e,
        g.input(sq.actions.clone()),
        Some(g.input(sq.noise.clone())),
        steps,
    )
    .unwrap();
    out.states.iter().map(|s| LatentState::read(&g, s)).collect()
}

#[test]
fn filter_is_deterministic_and_single_step_matches_manual() {
    for fam in FAMILIES {
        let cfg = toy_cfg(fam);
        let p = params(&cfg, 11);
        let sq = seq(&cfg, 3, 2, 12);
        assert_eq!(run_filter(&cfg, &p, &sq, 3), run_filter(&cfg, &p, &sq, 3));

        let one = seq(&cfg, 1, 2, 13);
        let filtered = run_filter(&cfg, &p, &one, 1);
        let g = Graph::<f64>::inference();
        let b = p.bind(&g);
        let m = LatentModel::new(&cfg, &g, &b).unwrap();
        let s0 = m.initial_state(2);
        let a = g.input(one.actions.clone());
        let tr = m.prior_step(&s0, a).unwrap();
        let e = m.embed(g.input(one.obs.clone())).unwrap();
        let post = m.posterior_step(&s0, a, &tr, e).unwrap();
        let st = m.commit(&tr, &post, Some(g.input(one.noise.clone()))).unwrap();
        assert_eq!(filtered[0], LatentState::read(&g, &st));
    }
}

#[test]
fn filter_and_prior_share_deterministic_path() {
    let cfg = toy_cfg(Family::Rssm);
    let p = params(&cfg, 14);
    let sq = seq(&cfg, 4, 2, 15);
    let states = run_filter(&cfg, &p, &sq, 4);
    let g = Graph::<f64>::inference();
    let b = p.bind(&g);
    let m = LatentModel::new(&cfg, &g, &b).unwrap();
    for t in 1..4 {
        let prev = states[t - 1].input(&g);
        let a = g.input(sq.actions.slice_rows(t * 2, t * 2 + 2));
        let tr = m.prior_step(&prev, a).unwrap();
        assert_eq!(&g.tensor(tr.h.unwrap()), states[t].h.as_ref().unwrap());
    }
}

#[test]
fn rollout_prior_edge_cases() {
    let cfg = toy_cfg(Family::Rnn);
    let p = params(&cfg, 16);
    let g = Graph::<f64>::inference();
    let b = p.bind(&g);
    let m = LatentModel::new(&cfg, &g, &b).unwrap();
    let init = m.initial_state(2);
    let a = g.input(Tensor::<f64>::zeros(&[0, 2]));
    assert!(rollout_prior(&m, &init, a, None, 0).unwrap().is_empty());
    let acts = g.input(Tensor::from_fn(&[6, 2], |i| (i as f64).sin()));
    let r1 = rollout_prior(&m, &init, acts, Some(g.input(Tensor::full(&[6, 4], 1.0))), 3).unwrap();
    let r2 = rollout_prior(&m, &init, acts, Some(g.input(Tensor::full(&[6, 4], -2.0))), 3).unwrap();
    for (x, y) in r1.iter().zip(&r2) {
        assert_eq!(g.tensor(x.0.h.unwrap()), g.tensor(y.0.h.unwrap()));
    }
}

/// With the posterior parameters cut off from the graph, no gradient reaches
/// the observation pixels from their own reconstruction.
#[test]
fn observations_reach_reconstruction_only_through_posterior() {
    for fam in FAMILIES {
        let cfg = toy_cfg(fam);
        let p = params(&cfg, 17);
        let sq = seq(&cfg, 2, 1, 18);
        for cut in [false, true] {
            let g = Graph::new();
            let b = p.bind(&g);
            let m = LatentModel::new(&cfg, &g, &b).unwrap();
            let obs = g.param(sq.obs.clone());
            let e = m.embed(obs).unwrap();
            let s0 = m.initial_state(1);
            let a = g.input(sq.actions.slice_rows(0, 1));
            let tr = m.prior_step(&s0, a).unwrap();
            let mut post = m.posterior_step(&s0, a, &tr, g.slice_rows(e, 0, 1)).unwrap();
            if cut {
                post = post.stop_gradient(&g);
            }
            let st = m.commit(&tr, &post, Some(g.input(sq.noise.slice_rows(0, 1)))).unwrap();
            let rec = m.decode_observation(&st).unwrap();
            let grads = g.backward(g.sum(g.square(rec)));
            let any = grads.get(obs).is_some_and(|d| d.iter().any(|&x| x != 0.0));
            assert_eq!(any, !cut, "family {fam} cut {cut}");
        }
    }
}

#[test]
fn init_is_seeded_and_checkable() {
    let cfg = toy_cfg(Family::Rssm);
    let a = params(&cfg, 1);
    assert_eq!(a, params(&cfg, 1));
    assert_ne!(a, params(&cfg, 2));
    assert!(check_params(&cfg, &a).is_ok());
    assert!(check_params(&toy_cfg(Family::Ssm), &a).is_err());
    for (name, t) in a.iter() {
        if name.ends_with("/b") {
            assert!(t.data().iter().all(|&x| x == 0.0));
        } else {
            let fan = param_specs(&cfg).into_iter().find(|s| s.name == name).unwrap().fan_in;
            let bound = 2.0 / fan.sqrt();
            assert!(t.data().iter().all(|x| x.abs() <= bound + 1e-12), "{name}");
        }
    }
}
