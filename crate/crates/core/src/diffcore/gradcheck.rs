//! Central finite-difference gradient checks in f64.

use super::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Relative-error floor used in the denominator.
pub const EPS_DEN: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(EPS_DEN)
}

/// Compares reverse-mode gradients against central differences.
///
/// `loss_fn` builds a scalar loss in the given graph from the bound
/// parameters. At most `max_coords` coordinates per parameter are checked,
/// spread evenly across the array.
pub fn finite_diff_check<F>(
    params: &ParamStore<f64>,
    h: f64,
    max_coords: usize,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &Bound) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::OutOfRange(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    let g = Graph::new();
    let bound = params.bind(&g);
    let loss = loss_fn(&g, &bound)?;
    if g.shape(loss).iter().product::<usize>() != 1 {
        return Err(Error::dim("loss must be a scalar"));
    }
    let grads = bound.grads(&g, &g.backward(loss));

    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let g = Graph::inference();
        let b = p.bind(&g);
        let l = loss_fn(&g, &b)?;
        Ok(g.item(l))
    };

    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for (name, value) in params.iter() {
        let n = value.len();
        let picks: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|i| i * n / max_coords).collect()
        };
        for idx in picks {
            let original = value.data()[idx];
            let mut perturbed = |delta: f64| -> Result<f64> {
                let mut t: Tensor<f64> = value.clone();
                t.data_mut()[idx] = original + delta;
                work.set(name, t)?;
                eval(&work)
            };
            let up = perturbed(h)?;
            let down = perturbed(-h)?;
            work.set(name, value.clone())?;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[name].data()[idx];
            let e = rel_error(analytic, numeric);
            report.max_rel_error = report.max_rel_error.max(if e.is_nan() { f64::INFINITY } else { e });
            report.coords.push(CoordCheck {
                param: name.to_string(),
                index: idx,
                analytic,
                numeric,
                rel_error: e,
            });
        }
    }
    Ok(report)
}
