//! Independent reference implementations shared by the integration and
//! acceptance tests. They favour obviousness over speed.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use tlemu::dynsys::{BrusselatorSpec, KsSpec, L96Spec};
use tlemu::evaluation::{Ensemble, Truth};
use tlemu::neuralnet::{DropoutMask, ParamStore};
use tlemu::seqmodel::{EmulatorModel, Target};
use tlemu::Series;

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn random_vec(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(lo, hi);
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

pub fn random_series(rows: usize, dim: usize, seed: u64) -> Series {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Series::new(
        dim,
        (0..rows * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect(),
    )
    .unwrap()
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Finite-difference KS tendency built from explicit differentiation
/// matrices.
pub fn ks_oracle(u: &[f64], spec: &KsSpec) -> Vec<f64> {
    let n = u.len();
    let dx = spec.length / n as f64;
    let stencil = |offsets: &[(isize, f64)], scale: f64| {
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            for &(o, c) in offsets {
                row[wrap(i as isize + o, n)] += c * scale;
            }
        }
        m
    };
    let d1 = stencil(&[(-1, -1.0), (1, 1.0)], 1.0 / (2.0 * dx));
    let d2 = stencil(&[(-1, 1.0), (0, -2.0), (1, 1.0)], 1.0 / (dx * dx));
    let d4 = stencil(
        &[(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)],
        1.0 / dx.powi(4),
    );
    let apply = |m: &Vec<Vec<f64>>| -> Vec<f64> {
        m.iter()
            .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    };
    let (a, b, c) = (apply(&d1), apply(&d2), apply(&d4));
    (0..n)
        .map(|i| -u[i] * a[i] - b[i] - spec.nu * c[i])
        .collect()
}

/// Brusselator tendency on nested row vectors with wrapped indices.
pub fn brusselator_oracle(state: &[f64], spec: &BrusselatorSpec) -> Vec<f64> {
    let n = spec.side;
    let grid =
        |f: &[f64]| -> Vec<Vec<f64>> { (0..n).map(|r| f[r * n..(r + 1) * n].to_vec()).collect() };
    let (u, v) = (grid(&state[..n * n]), grid(&state[n * n..]));
    let lap = |f: &Vec<Vec<f64>>, r: usize, c: usize| {
        let (r, c) = (r as isize, c as isize);
        let at = |rr: isize, cc: isize| f[wrap(rr, n)][wrap(cc, n)];
        at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c)
    };
    let mut du = Vec::new();
    let mut dv = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let (a, b) = (spec.a, spec.b);
            du.push(
                spec.d0 * lap(&u, r, c) + a - (b + 1.0) * u[r][c] + u[r][c] * u[r][c] * v[r][c],
            );
            dv.push(spec.d1 * lap(&v, r, c) + b * u[r][c] - u[r][c] * u[r][c] * v[r][c]);
        }
    }
    du.extend(dv);
    du
}

/// Two-tier L96 tendency indexing fast variables as `Y[k][j]`, with the ring
/// wrapping from `(k, J-1)` to `(k+1, 0)` and from `(K-1, J-1)` to `(0, 0)`.
pub fn l96_oracle(state: &[f64], spec: &L96Spec) -> Vec<f64> {
    let (kk, jj) = (spec.k, spec.j);
    let x = &state[..kk];
    let y: Vec<Vec<f64>> = (0..kk)
        .map(|k| state[kk + k * jj..kk + (k + 1) * jj].to_vec())
        .collect();
    let fast = |k: isize, j: isize| {
        let mut k = k;
        let mut j = j;
        while j >= jj as isize {
            j -= jj as isize;
            k += 1;
        }
        while j < 0 {
            j += jj as isize;
            k -= 1;
        }
        y[wrap(k, kk)][j as usize]
    };
    let hcb = spec.h * spec.c / spec.b;
    let mut out = Vec::new();
    for k in 0..kk {
        let ki = k as isize;
        let sum_y: f64 = y[k].iter().sum();
        out.push(
            -x[wrap(ki - 1, kk)] * (x[wrap(ki - 2, kk)] - x[wrap(ki + 1, kk)]) - x[k]
                + spec.forcing
                - hcb * sum_y,
        );
    }
    for k in 0..kk {
        for j in 0..jj {
            let (ki, ji) = (k as isize, j as isize);
            out.push(
                -spec.c * spec.b * fast(ki, ji + 1) * (fast(ki, ji + 2) - fast(ki, ji - 1))
                    - spec.c * y[k][j]
                    - hcb * x[k],
            );
        }
    }
    out
}

fn tensor<'a>(store: &'a ParamStore, name: &str) -> &'a [f64] {
    store.data(
        store
            .id(name)
            .unwrap_or_else(|| panic!("missing tensor {name}")),
    )
}

fn affine(store: &ParamStore, prefix: &str, input: &[f64]) -> Vec<f64> {
    let w = tensor(store, &format!("{prefix}.w"));
    let b = tensor(store, &format!("{prefix}.b"));
    let cols = input.len();
    (0..b.len())
        .map(|r| b[r] + (0..cols).map(|c| w[r * cols + c] * input[c]).sum::<f64>())
        .collect()
}

/// One GRU step written out gate by gate from the stored tensors.
pub fn gru_oracle(store: &ParamStore, h: &[f64], x: &[f64]) -> Vec<f64> {
    let hd = h.len();
    let gate = |g: &str, hh: &[f64]| -> Vec<f64> {
        let w = tensor(store, &format!("gru.w_{g}"));
        let u = tensor(store, &format!("gru.u_{g}"));
        let b = tensor(store, &format!("gru.b_{g}"));
        (0..hd)
            .map(|r| {
                let wx: f64 = (0..x.len()).map(|c| w[r * x.len() + c] * x[c]).sum();
                let uh: f64 = (0..hd).map(|c| u[r * hd + c] * hh[c]).sum();
                wx + uh + b[r]
            })
            .collect()
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let z: Vec<f64> = gate("z", h).into_iter().map(sig).collect();
    let r: Vec<f64> = gate("r", h).into_iter().map(sig).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = gate("c", &rh).into_iter().map(f64::tanh).collect();
    (0..hd)
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
        .collect()
}

pub fn head_oracle(store: &ParamStore, prefix: &str, h: &[f64]) -> Vec<f64> {
    let a: Vec<f64> = affine(store, &format!("{prefix}.hidden"), h)
        .into_iter()
        .map(f64::tanh)
        .collect();
    affine(store, &format!("{prefix}.out"), &a)
}

/// Mean per-step negative log of the product of univariate normal densities.
pub fn nll_oracle(
    model: &EmulatorModel,
    target: Target,
    x: &Series,
    y: Option<&Series>,
    masks: Option<&[DropoutMask]>,
) -> f64 {
    let store = &model.store;
    let (seq, prefix, log_scale) = match target {
        Target::LowRes => (x, "head_x", tensor(store, "log_sigma")[0]),
        Target::HighRes => (y.unwrap(), "head_y", tensor(store, "log_rho")[0]),
    };
    let sigma = log_scale.exp();
    let mut h = vec![0.0; model.arch.hidden];
    let mut total = 0.0;
    for t in 0..x.len() - 1 {
        h = gru_oracle(store, &h, x.row(t));
        let inp = match masks {
            Some(m) => m[t].apply(&h),
            None => h.clone(),
        };
        let inc = head_oracle(store, prefix, &inp);
        for i in 0..seq.dim() {
            let mean = seq.row(t)[i] + inc[i];
            let z = (seq.row(t + 1)[i] - mean) / sigma;
            let density = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            total -= density.ln();
        }
    }
    total / (x.len() - 1) as f64
}

/// Triple-loop error and spread straight from their definitions.
pub fn error_spread_oracle(ens: &Ensemble, truth: &Truth) -> (Vec<f64>, Vec<f64>) {
    let (mm, nn, tt, dd) = (ens.m, ens.n, ens.steps, ens.d);
    let value = |m: usize, n: usize, t: usize, i: usize| ens.data[((m * nn + n) * tt + t) * dd + i];
    let mut err = Vec::new();
    let mut spr = Vec::new();
    for t in 0..tt {
        let mut e = 0.0;
        let mut s = 0.0;
        for m in 0..mm {
            for i in 0..dd {
                let mut mean = 0.0;
                for n in 0..nn {
                    mean += value(m, n, t, i);
                }
                mean /= nn as f64;
                e += (truth.data[(m * tt + t) * dd + i] - mean).powi(2);
                for n in 0..nn {
                    s += (value(m, n, t, i) - mean).powi(2);
                }
            }
        }
        err.push((e / (mm * dd) as f64).sqrt());
        spr.push((s / (mm * nn * dd) as f64).sqrt());
    }
    (err, spr)
}

/// Small standardized L96 splits from a short simulation.
pub fn small_l96_splits(
    train: usize,
    val: usize,
    holdout: usize,
    seed: u64,
) -> tlemu::commands::Splits {
    use tlemu::config::{ExperimentConfig, Preset};
    use tlemu::dynsys::{SystemSpec, SystemTag};
    let mut cfg = ExperimentConfig::preset(SystemTag::L96, Preset::Desk);
    cfg.master_seed = seed;
    if let SystemSpec::L96(s) = &mut cfg.simulation {
        s.spinup_steps = 200;
    }
    cfg.split = tlemu::coarsegrain::SplitPlan {
        train_len: train,
        val_len: val,
        holdout_len: holdout,
        buffer_len: 10,
    };
    tlemu::commands::prepare_data(&cfg).unwrap()
}
