use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Gradients, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Named arrays keyed by parameter name (gradients, typically).
pub type NamedArrays<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub value: Tensor<T>,
    /// Adam first moment.
    pub m: Vec<T>,
    /// Adam second moment.
    pub v: Vec<T>,
    pub step: u64,
}

/// Named, fixed-shape parameter arrays plus their Adam state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: BTreeMap<String, ParamEntry<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            eps: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Adds a parameter. Names are unique; re-inserting is an error.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        let n = value.len();
        self.entries.insert(
            name,
            ParamEntry {
                value,
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                step: 0,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    /// Overwrites the values of an existing parameter (same shape).
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if e.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: e.value.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Values converted to another precision; optimizer state is reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, e) in &self.entries {
            out.insert(k.clone(), e.value.cast()).expect("unique names");
        }
        out
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind<U: Real>(&self, g: &Graph<U>) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), g.param(e.value.cast())))
            .collect();
        Bound { vars }
    }

    fn check_grads(&self, grads: &NamedArrays<T>) -> Result<()> {
        for (name, g) in grads {
            let e = self
                .entries
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if e.value.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: e.value.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// One Adam update. Entries without a gradient are treated as having a
    /// zero gradient. Shapes are validated before anything is modified.
    pub fn adam_step(&mut self, grads: &NamedArrays<T>, cfg: &AdamConfig) -> Result<()> {
        if cfg.lr <= 0.0 || !cfg.lr.is_finite() {
            return Err(Error::config("learning rate must be positive"));
        }
        self.check_grads(grads)?;
        let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
        let (lr, eps) = (T::c(cfg.lr), T::c(cfg.eps));
        let one = T::one();
        for (name, e) in self.entries.iter_mut() {
            e.step += 1;
            let t = e.step as i32;
            let c1 = one - b1.powi(t);
            let c2 = one - b2.powi(t);
            let g = grads.get(name).map(Tensor::data);
            for i in 0..e.m.len() {
                let gi = g.map_or(T::zero(), |g| g[i]);
                e.m[i] = b1 * e.m[i] + (one - b1) * gi;
                e.v[i] = b2 * e.v[i] + (one - b2) * gi * gi;
                let m_hat = e.m[i] / c1;
                let v_hat = e.v[i] / c2;
                let x = &mut e.value.data_mut()[i];
                *x = *x - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Parameter leaves registered in one graph.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    /// Collects per-parameter gradients; unreached parameters get zeros.
    pub fn grads<T: Real>(&self, g: &Graph<T>, grads: &Gradients<T>) -> NamedArrays<T> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let shape = g.shape(v);
                let n = shape.iter().product();
                let t = Tensor::new(&shape, grads.get_or_zeros(v, n)).expect("grad shape");
                (k.clone(), t)
            })
            .collect()
    }
}

/// Outcome of [`clip_global_norm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipReport {
    pub norm: f64,
    pub clipped: bool,
    /// False when the norm was NaN or infinite; gradients are left untouched.
    pub finite: bool,
}

/// Rescales all arrays jointly so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<T: Real>(grads: &mut NamedArrays<T>, max_norm: f64) -> Result<ClipReport> {
    if max_norm <= 0.0 || max_norm.is_nan() {
        return Err(Error::config("max_norm must be positive"));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Ok(ClipReport {
            norm,
            clipped: false,
            finite: false,
        });
    }
    if norm <= max_norm {
        return Ok(ClipReport {
            norm,
            clipped: false,
            finite: true,
        });
    }
    let k = T::c(max_norm / norm);
    for g in grads.values_mut() {
        for x in g.data_mut() {
            *x = *x * k;
        }
    }
    Ok(ClipReport {
        norm,
        clipped: true,
        finite: true,
    })
}

pub fn global_norm<T: Real>(grads: &NamedArrays<T>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|x| {
            let v = x.f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct IndexEntry {
    name: String,
    kind: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointIndex {
    format: String,
    blob: String,
    entries: Vec<IndexEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

const CHECKPOINT_FORMAT: &str = "planet-checkpoint-v1";

/// `stem.json` and `stem.bin` for a checkpoint path given with or without
/// either extension.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut bin = stem.into_os_string();
    bin.push(".bin");
    (PathBuf::from(json), PathBuf::from(bin))
}

impl ParamStore<f32> {
    /// Writes a JSON index plus one little-endian f32 blob. `meta` is stored
    /// verbatim in the index (model and run configuration).
    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let (json_path, bin_path) = checkpoint_paths(path);
        if let Some(dir) = json_path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut blob: Vec<u8> = Vec::with_capacity(self.num_scalars() * 12);
        let mut entries = Vec::new();
        for (name, e) in &self.entries {
            let arrays: [(&str, &[f32]); 3] = [("param", e.value.data()), ("adam_m", &e.m), ("adam_v", &e.v)];
            for (kind, data) in arrays {
                entries.push(IndexEntry {
                    name: name.clone(),
                    kind: kind.to_string(),
                    shape: e.value.shape().to_vec(),
                    dtype: "f32".into(),
                    offset: blob.len() as u64,
                    step: (kind == "param").then_some(e.step),
                });
                for x in data {
                    blob.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let index = CheckpointIndex {
            format: CHECKPOINT_FORMAT.into(),
            blob: bin_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            entries,
            meta,
        };
        fs::File::create(&bin_path)?.write_all(&blob)?;
        fs::write(&json_path, serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`save`](Self::save); returns the store and its metadata.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (json_path, bin_path) = checkpoint_paths(path);
        let index: CheckpointIndex = serde_json::from_slice(&fs::read(&json_path)?)?;
        let bad = |reason: String| Error::Format {
            path: json_path.clone(),
            reason,
        };
        if index.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown format `{}`", index.format)));
        }
        let blob = fs::read(&bin_path)?;
        let mut store = ParamStore::new();
        for ie in &index.entries {
            if ie.dtype != "f32" {
                return Err(bad(format!("unsupported dtype `{}`", ie.dtype)));
            }
            let n: usize = ie.shape.iter().product();
            let start = ie.offset as usize;
            let bytes = blob
                .get(start..start + 4 * n)
                .ok_or_else(|| bad(format!("entry `{}` overruns blob", ie.name)))?;
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            match ie.kind.as_str() {
                "param" => {
                    store.insert(ie.name.clone(), Tensor::new(&ie.shape, data)?)?;
                    store.entries.get_mut(&ie.name).expect("inserted").step = ie.step.unwrap_or(0);
                }
                "adam_m" | "adam_v" => {
                    let e = store
                        .entries
                        .get_mut(&ie.name)
                        .ok_or_else(|| bad(format!("optimizer state before parameter `{}`", ie.name)))?;
                    if ie.kind == "adam_m" {
                        e.m = data;
                    } else {
                        e.v = data;
                    }
                }
                other => return Err(bad(format!("unknown entry kind `{other}`"))),
            }
        }
        Ok((store, index.meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[(&str, Vec<f32>)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (k, v) in values {
            s.insert(*k, Tensor::new(&[v.len()], v.clone()).unwrap()).unwrap();
        }
        s
    }

    fn grads(values: &[(&str, Vec<f32>)]) -> NamedArrays<f32> {
        values
            .iter()
            .map(|(k, v)| (k.to_string(), Tensor::new(&[v.len()], v.clone()).unwrap()))
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = store(&[("a", vec![1.0, -2.0]), ("b", vec![0.5])]);
        let before = s.clone();
        s.adam_step(&grads(&[("a", vec![0.0, 0.0]), ("b", vec![0.0])]), &AdamConfig::default())
            .unwrap();
        for (k, v) in before.iter() {
            assert_eq!(s.get(k).unwrap(), v);
        }
        assert_eq!(s.entry("a").unwrap().step, 1);
    }

    /// Scalar Adam written out independently in f64.
    fn reference_adam(x0: f64, gs: &[f64], lr: f64, eps: f64) -> Vec<f64> {
        let (b1, b2) = (0.9f64, 0.999f64);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = Vec::new();
        for (t, g) in gs.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            x -= lr * mh / (vh.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn constant_gradient_matches_reference_trace() {
        let (lr, eps) = (1e-3, 1e-4);
        let cfg = AdamConfig { lr, eps, ..Default::default() };
        let mut s: ParamStore<f64> = ParamStore::new();
        s.insert("x", Tensor::scalar(0.0)).unwrap();
        let reference = reference_adam(0.0, &vec![1.0; 1000], lr, eps);
        let g: NamedArrays<f64> = [("x".to_string(), Tensor::scalar(1.0))].into();
        for want in &reference {
            s.adam_step(&g, &cfg).unwrap();
            let got = s.get("x").unwrap().data()[0];
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        // m_hat / sqrt(v_hat) == 1 for a constant gradient: each step moves ~lr.
        let last = reference[999] - reference[998];
        assert!((last + lr / (1.0 + eps)).abs() < 1e-9);
        assert!((reference[999] + 1000.0 * lr / (1.0 + eps)).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let mut s = store(&[("w", vec![1.0, 2.0])]);
        let err = s
            .adam_step(&grads(&[("w", vec![1.0])]), &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(s.get("w").unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn adam_is_deterministic() {
        let g = grads(&[("a", vec![0.3, -1.7]), ("b", vec![2.5])]);
        let run = || {
            let mut s = store(&[("a", vec![1.0, -2.0]), ("b", vec![0.5])]);
            for _ in 0..10 {
                s.adam_step(&g, &AdamConfig::default()).unwrap();
            }
            s
        };
        let (a, b) = (run(), run());
        for (k, v) in a.iter() {
            let w = b.get(k).unwrap();
            assert!(v.data().iter().zip(w.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn clip_examples() {
        let mut g = grads(&[("a", vec![300.0, 400.0])]);
        let r = clip_global_norm(&mut g, 1000.0).unwrap();
        assert!(!r.clipped && (r.norm - 500.0).abs() < 1e-9);
        assert_eq!(g["a"].data(), &[300.0, 400.0]);

        let mut g = grads(&[("a", vec![3.0, 4.0])]);
        clip_global_norm(&mut g, 1.0).unwrap();
        let d = g["a"].data();
        assert!((d[0] - 0.6).abs() < 1e-6 && (d[1] - 0.8).abs() < 1e-6);

        let mut g = grads(&[("a", vec![f32::NAN, 1.0])]);
        let r = clip_global_norm(&mut g, 1.0).unwrap();
        assert!(!r.finite && r.norm.is_nan());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(&[("enc/w", vec![1.5, -0.25, f32::MIN_POSITIVE]), ("z", vec![3.0])]);
        s.adam_step(&grads(&[("z", vec![0.7])]), &AdamConfig::default()).unwrap();
        let meta = serde_json::json!({"model": {"family": "rssm"}});
        let path = dir.path().join("ckpt/step_1");
        s.save(&path, meta.clone()).unwrap();
        let (loaded, m) = ParamStore::load(&path.with_extension("json")).unwrap();
        assert_eq!(m, meta);
        assert_eq!(loaded, s);
        for (k, v) in s.iter() {
            let w = loaded.get(k).unwrap();
            assert!(v.data().iter().zip(w.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
