use crate::error::{Error, Result};

/// `0.5 · ln(2π)`.
pub const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Negative log-density of `residual` under `N(0, exp(log_scale)² I)`.
pub fn gaussian_nll(residual: &[f64], log_scale: f64) -> Result<f64> {
    if residual.is_empty() {
        return Err(Error::invalid("gaussian_nll needs at least one dimension"));
    }
    if !residual.iter().all(|r| r.is_finite()) || !log_scale.is_finite() {
        return Err(Error::NonFinite {
            what: "gaussian_nll input".into(),
        });
    }
    Ok(nll_unchecked(residual, log_scale))
}

pub(crate) fn nll_unchecked(residual: &[f64], log_scale: f64) -> f64 {
    let inv_var = (-2.0 * log_scale).exp();
    let ss: f64 = residual.iter().map(|r| r * r).sum();
    residual.len() as f64 * (HALF_LOG_2PI + log_scale) + 0.5 * ss * inv_var
}

/// Gradients of `upstream · gaussian_nll` with respect to the residual and
/// the log-scale. The residual gradient is accumulated into `d_residual`.
pub fn gaussian_nll_backward(
    residual: &[f64],
    log_scale: f64,
    upstream: f64,
    d_residual: &mut [f64],
) -> f64 {
    let inv_var = (-2.0 * log_scale).exp();
    let mut ss = 0.0;
    for (d, r) in d_residual.iter_mut().zip(residual) {
        *d += upstream * r * inv_var;
        ss += r * r;
    }
    upstream * (residual.len() as f64 - ss * inv_var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((gaussian_nll(&[0.0], 0.0).unwrap() - 0.918_938_5).abs() < 1e-7);
        assert!((gaussian_nll(&[1.0], 0.0).unwrap() - 1.418_938_5).abs() < 1e-7);
        assert!((gaussian_nll(&[0.0], 2f64.ln()).unwrap() - 1.612_085_7).abs() < 1e-7);
        assert!(gaussian_nll(&[f64::NAN], 0.0).is_err());
        assert!(gaussian_nll(&[], 0.0).is_err());
    }

    #[test]
    fn minimized_at_rms_log_scale() {
        let r = [0.3, -1.2, 0.8, 2.1, -0.4];
        let ms = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
        let best = 0.5 * ms.ln();
        let f0 = gaussian_nll(&r, best).unwrap();
        for delta in [-1e-3, 1e-3, -0.1, 0.1] {
            assert!(gaussian_nll(&r, best + delta).unwrap() > f0);
        }
        let mut d = [0.0; 5];
        assert!(gaussian_nll_backward(&r, best, 1.0, &mut d).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_central_difference() {
        let r = [0.7, -0.2, 1.1];
        let s = 0.3;
        let mut d = [0.0; 3];
        let ds = gaussian_nll_backward(&r, s, 1.0, &mut d);
        let h = 1e-6;
        let num = (gaussian_nll(&r, s + h).unwrap() - gaussian_nll(&r, s - h).unwrap()) / (2.0 * h);
        assert!((ds - num).abs() < 1e-8);
        for i in 0..3 {
            let mut p = r;
            let mut m = r;
            p[i] += h;
            m[i] -= h;
            let num = (gaussian_nll(&p, s).unwrap() - gaussian_nll(&m, s).unwrap()) / (2.0 * h);
            assert!((d[i] - num).abs() < 1e-8);
        }
    }
}
