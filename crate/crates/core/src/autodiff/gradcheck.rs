use rayon::prelude::*;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Worst finite-difference disagreement within one parameter.
#[derive(Clone, Debug)]
pub struct ParamError {
    pub name: String,
    pub max_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Sorted by descending error.
    pub per_param: Vec<ParamError>,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of `scalar_fn` against central
/// differences over every entry of every parameter in `store`.
///
/// The error for one entry is `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(store: &ParamStore<f64>, scalar_fn: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var> + Sync,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Invalid(format!("finite-difference step {step}")));
    }
    let mut tape = Tape::new();
    let loss = scalar_fn(&mut tape, store)?;
    let analytic = tape.param_gradients(loss, store)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let l = scalar_fn(&mut t, s)?;
        let v = t.value(l).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    let ids: Vec<_> = store.ids().collect();
    let mut per_param = ids
        .par_iter()
        .map(|&id| -> Result<ParamError> {
            let mut local = store.clone();
            let n = local.get(id).value.len();
            let mut worst = ParamError {
                name: local.get(id).name.clone(),
                max_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
            };
            for i in 0..n {
                let orig = local.get(id).value.data()[i];
                local.get_mut(id).value.data_mut()[i] = orig + step;
                let plus = eval(&local)?;
                local.get_mut(id).value.data_mut()[i] = orig - step;
                let minus = eval(&local)?;
                local.get_mut(id).value.data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
                let err = (a - numeric).abs() / numeric.abs().max(1.0);
                if err > worst.max_error || i == 0 {
                    worst = ParamError { max_error: err, worst_index: i, analytic: a, numeric, ..worst };
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<_>>>()?;
    per_param.sort_by(|a, b| b.max_error.total_cmp(&a.max_error));
    Ok(GradCheckReport {
        max_relative_error: per_param.first().map_or(0.0, |p| p.max_error),
        entries_checked: store.num_scalars(),
        per_param,
    })
}
