use rand::seq::index;

use super::{ParamStore, Tensor};
use crate::{seed, Error, Result};

/// Central difference stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    TwoPoint,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`
    FourPoint,
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Coordinates probed; all of them when the store is smaller.
    pub coords: usize,
    pub seed: u64,
    pub stencil: Stencil,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-3,
            coords: 64,
            seed: 0,
            stencil: Stencil::FourPoint,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

/// Compare analytic gradients against central differences on sampled
/// coordinates.
///
/// `f` maps a parameter store to `(loss, gradients)` with one gradient tensor
/// per store entry. Frozen entries are not probed. The error of a coordinate is
/// `|a - n| / max(1e-8, |a| + |n|)`; the report carries the maximum.
pub fn grad_check<F>(mut f: F, params: &ParamStore, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Vec<Tensor>)>,
{
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss at the base point".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradient tensors for {} parameters",
            analytic.len(),
            params.len()
        )));
    }

    let mut flat: Vec<(usize, usize)> = Vec::new();
    for id in params.ids() {
        if analytic[id.index()].shape() != params.get(id).shape() {
            return Err(Error::Shape(format!(
                "gradient of `{}` has shape {:?}",
                params.name(id),
                analytic[id.index()].shape()
            )));
        }
        if params.is_trainable(id) {
            flat.extend((0..params.get(id).len()).map(|j| (id.index(), j)));
        }
    }
    let picks: Vec<usize> = if cfg.coords >= flat.len() {
        (0..flat.len()).collect()
    } else {
        let mut rng = seed::rng(cfg.seed);
        let mut v = index::sample(&mut rng, flat.len(), cfg.coords).into_vec();
        v.sort_unstable();
        v
    };

    let ids: Vec<_> = params.ids().collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: picks.len(),
    };
    for &p in &picks {
        let (pi, j) = flat[p];
        let id = ids[pi];
        let orig = params.get(id).data()[j];

        let mut at = |offset: f64| -> Result<f64> {
            probe.get_mut(id).data_mut()[j] = orig + offset;
            let (v, _) = f(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!(
                    "loss while probing `{}`[{j}]",
                    params.name(id)
                )))
            }
        };
        let h = cfg.epsilon;
        let numeric = match cfg.stencil {
            Stencil::TwoPoint => (at(h)? - at(-h)?) / (2.0 * h),
            Stencil::FourPoint => {
                (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h)
            }
        };
        let a = analytic[pi].data()[j];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if err > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = err;
            report.worst_param = params.name(id).to_string();
            report.worst_index = j;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
