//! A small differentiable core: GRU and dense layers with hand-written
//! reverse passes, dropout, Gaussian likelihood, Adam, and a finite-difference
//! gradient checker. Everything runs in `f64`.

mod adam;
mod gradcheck;
mod layers;
mod loss;
mod params;

pub use adam::{adam_update, Adam};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use layers::{
    dropout_forward, Activation, Dense, DenseCache, DropoutMask, DropoutMode, GruCache, GruCell,
};
pub use loss::{gaussian_nll, gaussian_nll_backward, HALF_LOG_2PI};
pub use params::{Grads, Param, ParamId, ParamStore, Tensor};

/// `out = W x` for row-major `W` of shape `[rows × cols]`.
pub(crate) fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out += Wᵀ v`.
pub(crate) fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let vr = v[r];
        if vr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vr;
        }
    }
}

/// `g += a bᵀ`.
pub(crate) fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gi, bi) in row.iter_mut().zip(b) {
            *gi += ar * bi;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
