//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the forward pass; it shares nothing with
//! [`Tape::backward`](crate::autodiff::Tape::backward) beyond the graph
//! builder it is handed.

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative error, so entries whose true gradient is
/// ~0 are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Checks every scalar of every parameter.
pub fn check_gradients<F>(store: &ParamStore, eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    check_gradients_sampled(store, eps, usize::MAX, build)
}

/// Checks at most `max_per_param` evenly spaced scalars of each parameter.
pub fn check_gradients_sampled<F>(
    store: &ParamStore,
    eps: f64,
    max_per_param: usize,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let loss = build(&mut tape)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Numeric(
                "non-finite loss during gradient check".into(),
            ));
        }
        Ok(v)
    };

    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        let stride = if n <= max_per_param {
            1
        } else {
            n.div_ceil(max_per_param)
        };
        for idx in (0..n).step_by(stride) {
            let original = store.get(id).value.data()[idx];
            work.get_mut(id).value.data_mut()[idx] = original + eps;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[idx] = original - eps;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[idx]);
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((store.get(id).name.clone(), idx, analytic, numeric));
            }
        }
    }
    Ok(report)
}
