//! Central finite-difference verification of analytic gradients.
//!
//! The caller populates `Parameter.grad` through `Graph::backward` first and
//! then hands over a loss closure; every parameter coordinate is perturbed by
//! ±ε and compared. The relative-error denominator is floored at 1e−4 so
//! that coordinates whose true gradient sits at the finite-difference noise
//! level (≈1e−10 in double precision) are compared absolutely instead of
//! producing spurious blow-ups; any genuinely wrong gradient above that
//! level still registers.

use super::params::ParamStore;

const REL_DENOM_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare the gradients currently stored in `store` against central finite
/// differences of `loss`. `loss` must be deterministic: repeated calls on
/// identical parameter values must return identical values.
pub fn check_gradients<F>(store: &mut ParamStore, eps: f64, mut loss: F) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let n_params = store.len();
    for p in 0..n_params {
        let (name, n_coords) = {
            let param = store.get(super::params::ParamId(p));
            (param.name.clone(), param.value.len())
        };
        for k in 0..n_coords {
            let id = super::params::ParamId(p);
            let orig = store.get(id).value.data()[k];
            let analytic = store.get(id).grad.data()[k];

            store.get_mut(id).value.data_mut()[k] = orig + eps;
            let f_plus = loss(store);
            store.get_mut(id).value.data_mut()[k] = orig - eps;
            let f_minus = loss(store);
            store.get_mut(id).value.data_mut()[k] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(REL_DENOM_FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = k;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}
