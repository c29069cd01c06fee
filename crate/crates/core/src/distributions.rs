//! Diagonal Gaussians, both as plain values and as graph nodes.

use std::f64::consts::PI;

use crate::diffcore::{Graph, Real, Var};
use crate::error::{Error, Result};

/// Stddev floor added after softplus in learned heads.
pub const DEFAULT_STD_FLOOR: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::dim(format!(
                "mean has {} dims but stddev has {}",
                mean.len(),
                std.len()
            )));
        }
        if let Some(s) = std.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::OutOfRange(format!("stddev must be positive and finite, got {s}")));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(k: usize) -> Self {
        Self {
            mean: vec![0.0; k],
            std: vec![1.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, n: usize, what: &str) -> Result<()> {
        if n != self.dim() {
            return Err(Error::dim(format!("{what} has {n} dims, distribution has {}", self.dim())));
        }
        Ok(())
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.check(x.len(), "sample")?;
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((m, s), x)| -0.5 * (2.0 * PI).ln() - s.ln() - (x - m).powi(2) / (2.0 * s * s))
            .sum())
    }

    /// KL(self ‖ p), closed form.
    pub fn kl(&self, p: &DiagGaussian) -> Result<f64> {
        self.check(p.dim(), "other distribution")?;
        let mut total = 0.0;
        for i in 0..self.dim() {
            let (mq, sq, mp, sp) = (self.mean[i], self.std[i], p.mean[i], p.std[i]);
            total += (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5;
        }
        // Rounding can leave a tiny negative residue near q = p.
        Ok(total.max(0.0))
    }

    pub fn rsample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        self.check(noise.len(), "noise")?;
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect())
    }
}

/// A batch of diagonal Gaussians living in a graph: `mean` and `std` are `[n, k]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussVar {
    pub mean: Var,
    pub std: Var,
}

impl GaussVar {
    /// Splits a `[n, 2k]` head output into mean and `softplus(raw) + floor`.
    pub fn from_head<T: Real>(g: &Graph<T>, head: Var, k: usize, floor: f64) -> Self {
        let mean = g.slice_cols(head, 0, k);
        let raw = g.slice_cols(head, k, 2 * k);
        let std = g.shift(g.softplus(raw), floor);
        Self { mean, std }
    }

    pub fn rsample<T: Real>(&self, g: &Graph<T>, noise: Var) -> Var {
        g.add(self.mean, g.mul(self.std, noise))
    }

    pub fn stop_gradient<T: Real>(&self, g: &Graph<T>) -> Self {
        Self {
            mean: g.stop_gradient(self.mean),
            std: g.stop_gradient(self.std),
        }
    }

    /// Row-wise KL(self ‖ p) as `[n, 1]`.
    pub fn kl<T: Real>(&self, g: &Graph<T>, p: &GaussVar) -> Var {
        kl_rows(g, self.mean, self.std, p.mean, p.std)
    }

    /// Row-wise log-density as `[n, 1]`.
    pub fn log_prob<T: Real>(&self, g: &Graph<T>, x: Var) -> Var {
        let z = g.div(g.sub(x, self.mean), self.std);
        let k = g.shape(x)[1];
        let quad = g.scale(g.sum_rows(g.square(z)), -0.5);
        let logdet = g.sum_rows(g.log(self.std));
        g.shift(g.sub(quad, logdet), -0.5 * k as f64 * (2.0 * PI).ln())
    }
}

/// Row-wise KL between diagonal Gaussians given as `[n, k]` nodes; `[n, 1]` result.
pub fn kl_rows<T: Real>(g: &Graph<T>, mq: Var, sq: Var, mp: Var, sp: Var) -> Var {
    let ratio = g.div(sq, sp);
    let dm = g.div(g.sub(mq, mp), sp);
    // ln(sp/sq) + (sq²/sp² + dm²)/2 − 1/2
    let log_term = g.neg(g.log(ratio));
    let quad = g.scale(g.add(g.square(ratio), g.square(dm)), 0.5);
    g.sum_rows(g.shift(g.add(log_term, quad), -0.5))
}

/// Row-wise log-density of `x` under `N(mean, I)`; `[n, 1]`.
pub fn unit_log_prob_rows<T: Real>(g: &Graph<T>, mean: Var, x: Var) -> Var {
    let k = g.shape(x)[1];
    let quad = g.scale(g.sum_rows(g.square(g.sub(x, mean))), -0.5);
    g.shift(quad, -0.5 * k as f64 * (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{finite_diff_check, ParamStore, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn log_prob_examples() {
        let d = DiagGaussian::new(vec![0.3, -1.0], vec![1.0, 1.0]).unwrap();
        assert!((d.log_prob(&[0.3, -1.0]).unwrap() + 1.837877).abs() < 1e-6);
        let d = DiagGaussian::standard(1);
        assert!((d.log_prob(&[1.0]).unwrap() + 1.418939).abs() < 1e-6);
        assert!(d.log_prob(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn log_prob_integrates_to_one() {
        let d = DiagGaussian::new(vec![0.4], vec![0.7]).unwrap();
        let (lo, hi, n) = (-10.0, 10.0, 200_000);
        let dx = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * dx;
            total += d.log_prob(&[x]).unwrap().exp() * dx;
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn log_prob_is_product_of_normalized_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let std: Vec<f64> = (0..5).map(|_| rng.random_range(0.3..2.0)).collect();
        let d = DiagGaussian::new(mean.clone(), std.clone()).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut expect = 0.0;
        for i in 0..5 {
            // Unnormalized density, normalized by midpoint quadrature.
            let f = |t: f64| (-(t - mean[i]).powi(2) / (2.0 * std[i] * std[i])).exp();
            let (lo, hi, n) = (mean[i] - 12.0 * std[i], mean[i] + 12.0 * std[i], 100_000);
            let dx = (hi - lo) / n as f64;
            let z: f64 = (0..n).map(|j| f(lo + (j as f64 + 0.5) * dx) * dx).sum();
            expect += (f(x[i]) / z).ln();
        }
        assert!((d.log_prob(&x).unwrap() - expect).abs() < 1e-8);
    }

    #[test]
    fn kl_examples() {
        let q = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
        let p = DiagGaussian::standard(1);
        assert!((q.kl(&p).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(q.kl(&q).unwrap(), 0.0);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = DiagGaussian::new(vec![0.2, -0.5, 1.0], vec![0.8, 1.3, 0.5]).unwrap();
        let p = DiagGaussian::new(vec![0.0, 0.1, 0.4], vec![1.0, 0.9, 0.7]).unwrap();
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let e: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let x = q.rsample(&e).unwrap();
            let v = q.log_prob(&x).unwrap() - p.log_prob(&x).unwrap();
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - q.kl(&p).unwrap()).abs() < 3.0 * se + 1e-12);
    }

    #[test]
    fn rsample_examples() {
        let d = DiagGaussian::new(vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(d.rsample(&[2.0, -2.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(d.rsample(&[0.0, 0.0]).unwrap(), d.mean);
    }

    #[test]
    fn rsample_moments() {
        let d = DiagGaussian::new(vec![1.5], vec![0.4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| d.rsample(&[rng.sample(StandardNormal)]).unwrap()[0])
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((m - 1.5).abs() < 3.0 * 0.4 / (n as f64).sqrt());
        // SE of the sample stddev ≈ σ/√(2n)
        assert!((var.sqrt() - 0.4).abs() < 3.0 * 0.4 / (2.0 * n as f64).sqrt());
    }

    #[test]
    fn rejects_invalid() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![1.0, 1.0]).is_err());
    }

    fn rows(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn graph_versions_match_plain() {
        let q = DiagGaussian::new(vec![0.2, -0.5, 1.0], vec![0.8, 1.3, 0.5]).unwrap();
        let p = DiagGaussian::new(vec![0.0, 0.1, 0.4], vec![1.0, 0.9, 0.7]).unwrap();
        let g = Graph::<f64>::inference();
        let gq = GaussVar {
            mean: g.input(rows(&q.mean)),
            std: g.input(rows(&q.std)),
        };
        let gp = GaussVar {
            mean: g.input(rows(&p.mean)),
            std: g.input(rows(&p.std)),
        };
        assert!((g.item(gq.kl(&g, &gp)) - q.kl(&p).unwrap()).abs() < 1e-12);
        let x = [0.3, 0.3, -0.2];
        let lp = gq.log_prob(&g, g.input(rows(&x)));
        assert!((g.item(lp) - q.log_prob(&x).unwrap()).abs() < 1e-12);
        let unit = DiagGaussian::new(q.mean.clone(), vec![1.0; 3]).unwrap();
        let ulp = unit_log_prob_rows(&g, gq.mean, g.input(rows(&x)));
        assert!((g.item(ulp) - unit.log_prob(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn kl_and_log_prob_gradients() {
        let mut ps = ParamStore::new();
        ps.insert("mq", rows(&[0.2, -0.5, 1.0])).unwrap();
        ps.insert("rq", rows(&[0.1, 0.7, -0.4])).unwrap();
        ps.insert("mp", rows(&[0.0, 0.1, 0.4])).unwrap();
        ps.insert("rp", rows(&[-0.3, 0.2, 0.5])).unwrap();
        let r = finite_diff_check(&ps, 1e-5, 10, |g, b| {
            let q = GaussVar {
                mean: b.var("mq")?,
                std: g.shift(g.softplus(b.var("rq")?), 0.1),
            };
            let p = GaussVar {
                mean: b.var("mp")?,
                std: g.shift(g.softplus(b.var("rp")?), 0.1),
            };
            Ok(g.sum(q.kl(g, &p)))
        })
        .unwrap();
        assert!(r.passes(1e-6), "{:?}", r.worst());
        let r = finite_diff_check(&ps, 1e-5, 10, |g, b| {
            let q = GaussVar {
                mean: b.var("mq")?,
                std: g.shift(g.softplus(b.var("rq")?), 0.1),
            };
            Ok(g.sum(q.log_prob(g, b.var("mp")?)))
        })
        .unwrap();
        assert!(r.passes(1e-6), "{:?}", r.worst());
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_only_at_equality(
            mq in prop::collection::vec(-3.0f64..3.0, 3),
            sq in prop::collection::vec(0.05f64..3.0, 3),
            dm in prop::collection::vec(-1.0f64..1.0, 3),
            ds in prop::collection::vec(0.5f64..2.0, 3),
        ) {
            let q = DiagGaussian::new(mq.clone(), sq.clone()).unwrap();
            prop_assert_eq!(q.kl(&q).unwrap(), 0.0);
            let p = DiagGaussian::new(
                mq.iter().zip(&dm).map(|(a, b)| a + b).collect(),
                sq.iter().zip(&ds).map(|(a, b)| a * b).collect(),
            ).unwrap();
            let k = q.kl(&p).unwrap();
            prop_assert!(k >= 0.0);
            let differs = dm.iter().any(|d| d.abs() > 1e-3) || ds.iter().any(|d| (d - 1.0).abs() > 1e-3);
            if differs { prop_assert!(k > 0.0); }
        }
    }
}
