//! Parameter layout, initialization and the small building blocks shared by
//! all families.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Activation, Family, ModelConfig};
use crate::diffcore::{Bound, Graph, ParamStore, Real, Tensor, Var};
use crate::error::Result;

/// Name, shape and fan-in of one parameter; `fan_in == 0` marks a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: f64,
}

fn dense_spec(out: &mut Vec<ParamSpec>, name: &str, i: usize, o: usize) {
    out.push(ParamSpec {
        name: format!("{name}/w"),
        shape: vec![i, o],
        fan_in: i as f64,
    });
    out.push(ParamSpec {
        name: format!("{name}/b"),
        shape: vec![o],
        fan_in: 0.0,
    });
}

/// Every parameter the model of `cfg` uses.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    let (ds, dh, hid, a, e) = (
        cfg.stoch_dim(),
        cfg.deter_dim(),
        cfg.hidden,
        cfg.action_dim,
        cfg.embed_dim(),
    );
    for (i, l) in cfg.encoder_layers().iter().enumerate() {
        let kk = l.kernel * l.kernel * l.in_c;
        v.push(ParamSpec {
            name: format!("enc/conv{i}/w"),
            shape: vec![kk, l.out_c],
            fan_in: kk as f64,
        });
        v.push(ParamSpec {
            name: format!("enc/conv{i}/b"),
            shape: vec![l.out_c],
            fan_in: 0.0,
        });
    }
    let gru = |v: &mut Vec<ParamSpec>| {
        dense_spec(v, "gru/rz", hid + dh, 2 * dh);
        dense_spec(v, "gru/xn", hid, dh);
        dense_spec(v, "gru/hn", dh, dh);
    };
    match cfg.family {
        Family::Rssm => {
            dense_spec(&mut v, "trans/in", ds + a, hid);
            gru(&mut v);
            dense_spec(&mut v, "prior/h1", dh, hid);
            dense_spec(&mut v, "prior/out", hid, 2 * ds);
            dense_spec(&mut v, "post/h1", dh + e, hid);
            dense_spec(&mut v, "post/out", hid, 2 * ds);
        }
        Family::Ssm => {
            dense_spec(&mut v, "prior/h1", ds + a, hid);
            dense_spec(&mut v, "prior/out", hid, 2 * ds);
            dense_spec(&mut v, "post/h1", ds + a + e, hid);
            dense_spec(&mut v, "post/out", hid, 2 * ds);
        }
        Family::Rnn => {
            dense_spec(&mut v, "trans/in", a, hid);
            gru(&mut v);
            dense_spec(&mut v, "post/h1", dh + e, hid);
            dense_spec(&mut v, "post/out", hid, dh);
        }
    }
    let f = cfg.feature_dim();
    let (top_size, top_c, layers) = cfg.decoder_layers();
    dense_spec(&mut v, "dec/in", f, top_size * top_size * top_c);
    for (i, l) in layers.iter().enumerate() {
        let per_out = (l.kernel * l.kernel * l.in_c) as f64 / (l.stride * l.stride) as f64;
        v.push(ParamSpec {
            name: format!("dec/deconv{i}/w"),
            shape: vec![l.in_c, l.kernel * l.kernel * l.out_c],
            fan_in: per_out,
        });
        v.push(ParamSpec {
            name: format!("dec/deconv{i}/b"),
            shape: vec![l.out_c],
            fan_in: 0.0,
        });
    }
    dense_spec(&mut v, "rew/h1", f, hid);
    dense_spec(&mut v, "rew/h2", hid, hid);
    dense_spec(&mut v, "rew/out", hid, 1);
    v
}

/// Truncated-normal (±2σ) weights with σ = 1/√fan_in; zero biases.
pub fn init_params<T: Real>(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    for spec in param_specs(cfg) {
        let n: usize = spec.shape.iter().product();
        let data = if spec.fan_in == 0.0 {
            vec![T::zero(); n]
        } else {
            let sd = 1.0 / spec.fan_in.sqrt();
            (0..n)
                .map(|_| loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if z.abs() <= 2.0 {
                        break T::c(z * sd);
                    }
                })
                .collect()
        };
        store.insert(spec.name, Tensor::new(&spec.shape, data)?)?;
    }
    Ok(store)
}

/// Checks that a store holds exactly the parameters `cfg` expects.
pub fn check_params<T: Real>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<()> {
    let specs = param_specs(cfg);
    for s in &specs {
        let t = store
            .get(&s.name)
            .ok_or_else(|| crate::Error::UnknownParam(format!("{} (missing from checkpoint)", s.name)))?;
        if t.shape() != s.shape.as_slice() {
            return Err(crate::Error::ShapeMismatch {
                name: s.name.clone(),
                expected: s.shape.clone(),
                got: t.shape().to_vec(),
            });
        }
    }
    if store.len() != specs.len() {
        return Err(crate::Error::config(format!(
            "checkpoint has {} parameters, model expects {}",
            store.len(),
            specs.len()
        )));
    }
    Ok(())
}

pub(crate) fn activate<T: Real>(g: &Graph<T>, a: Activation, x: Var) -> Var {
    match a {
        Activation::Relu => g.relu(x),
        Activation::Elu => g.elu(x),
    }
}

pub(crate) fn dense<T: Real>(g: &Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}/w"))?;
    let b = p.var(&format!("{name}/b"))?;
    Ok(g.linear(x, w, Some(b)))
}

/// Gated recurrent cell with reset and update gates.
pub(crate) fn gru<T: Real>(g: &Graph<T>, p: &Bound, x: Var, h: Var) -> Result<Var> {
    let dh = g.shape(h)[1];
    let rz = g.sigmoid(dense(g, p, "gru/rz", g.concat_cols(&[x, h]))?);
    let r = g.slice_cols(rz, 0, dh);
    let z = g.slice_cols(rz, dh, 2 * dh);
    let hn = dense(g, p, "gru/hn", h)?;
    let n = g.tanh(g.add(dense(g, p, "gru/xn", x)?, g.mul(r, hn)));
    // h' = (1 − z) n + z h = n + z (h − n)
    Ok(g.add(n, g.mul(z, g.sub(h, n))))
}
