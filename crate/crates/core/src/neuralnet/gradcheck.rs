use super::{Grads, ParamStore};

/// Denominator floor for tensors whose gradient is (numerically) zero.
pub const RELATIVE_FLOOR: f64 = 1e-12;

/// Normwise relative error of one tensor: `max|a - n| / max(|a|_inf, |n|_inf)`.
///
/// Scaling by the tensor's largest entry rather than per element keeps
/// tiny entries, whose central differences are dominated by round-off in the
/// loss (about `eps * |L| / step`), from swamping the measure.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let err = diff / inf(analytic).max(inf(numeric)).max(RELATIVE_FLOOR);
    if err.is_nan() {
        f64::INFINITY
    } else {
        err
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor attaining the maximum.
    pub worst_param: String,
    /// Element of that tensor with the largest absolute discrepancy.
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `loss` for every
/// scalar in `store`. `loss` must be deterministic (fixed dropout masks).
pub fn finite_diff_check<F>(
    store: &ParamStore,
    analytic: &Grads,
    step: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = store.data(id)[i];
            probe.get_mut(id).data[i] = orig + step;
            let up = loss(&probe);
            probe.get_mut(id).data[i] = orig - step;
            let down = loss(&probe);
            probe.get_mut(id).data[i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        report.checked += n;
        let a = analytic.get(id);
        let err = relative_error(a, &numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_param = store.param(id).name.clone();
            report.worst_index = (0..n)
                .max_by(|&i, &j| {
                    (a[i] - numeric[i])
                        .abs()
                        .total_cmp(&(a[j] - numeric[j]).abs())
                })
                .unwrap_or(0);
        }
    }
    report
}
