use rand::seq::index::sample;

use super::{ParamId, ParamStore, RngStream};
use crate::error::{Error, Result};

/// Finite-difference check settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub epsilon: f64,
    /// Check at most this many coordinates, sampled without replacement.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            epsilon: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a non-differentiable point.
    pub skipped: usize,
    /// Parameter name and flat offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Rounding error assumed in each objective evaluation, in ulps of its value.
const ROUNDING_ULPS: f64 = 4.0;

/// `|a - n| / max(1e-8, |a| + |n|)`, where the discrepancy is first reduced
/// by `allowance`, the rounding noise the central difference itself carries.
/// Without it a gradient that is structurally zero (for example a softmax
/// shift direction) would show a relative error near one from noise alone.
fn rel_error(analytic: f64, numeric: f64, allowance: f64) -> f64 {
    ((analytic - numeric).abs() - allowance).max(0.0) / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the gradients already accumulated in `store` with central
/// differences of `f`.
pub fn grad_check<F>(store: &mut ParamStore, opts: &GradCheck, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    grad_check_piecewise(store, opts, |s| f(s).map(|v| (v, 0)))
}

/// Like [`grad_check`] for piecewise-smooth functions. `f` also returns a
/// fingerprint of its active pieces (argmax choices, activation signs);
/// coordinates where either perturbed evaluation lands on a different piece
/// than the unperturbed one are skipped rather than compared.
pub fn grad_check_piecewise<F>(
    store: &mut ParamStore,
    opts: &GradCheck,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, u64)>,
{
    let mut coords: Vec<(ParamId, usize)> = Vec::with_capacity(store.num_scalars());
    for id in store.ids() {
        coords.extend((0..store.value(id).as_slice().len()).map(|i| (id, i)));
    }
    if let Some(k) = opts.max_coords {
        if k < coords.len() {
            let mut rng = RngStream::new(opts.seed);
            let mut picked: Vec<usize> = sample(&mut rng, coords.len(), k).into_vec();
            picked.sort_unstable();
            coords = picked.into_iter().map(|i| coords[i]).collect();
        }
    }

    let eval = |f: &mut F, s: &ParamStore| -> Result<(f64, u64)> {
        let (v, fp) = f(s)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {v}")));
        }
        Ok((v, fp))
    };

    let (_, base_fp) = eval(&mut f, store)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let h = opts.epsilon;
    for (id, i) in coords {
        let orig = store.value(id).as_slice()[i];
        store.value_mut(id).as_mut_slice()[i] = orig + h;
        let plus = eval(&mut f, store);
        store.value_mut(id).as_mut_slice()[i] = orig - h;
        let minus = eval(&mut f, store);
        store.value_mut(id).as_mut_slice()[i] = orig;
        let ((fp_val, fp_plus), (fm_val, fp_minus)) = (plus?, minus?);
        if fp_plus != base_fp || fp_minus != base_fp {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp_val - fm_val) / (2.0 * h);
        let allowance = ROUNDING_ULPS * f64::EPSILON * (fp_val.abs() + fm_val.abs()) / (2.0 * h);
        let err = rel_error(store.grad(id).as_slice()[i], numeric, allowance);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((store.name(id).to_string(), i));
        }
    }
    Ok(report)
}
