//! Paired low/high-resolution datasets built by block averaging.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::dynsys::{FineTrajectory, Layout, SystemTag};
use crate::error::{Error, Result};
use crate::series::Series;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarsenSpec {
    pub temporal_factor: usize,
    /// Cells per block along each spatial axis. Ignored for L96, whose
    /// split is by variable role.
    pub spatial_factor: usize,
    pub system: SystemTag,
}

impl CoarsenSpec {
    pub fn for_system(system: SystemTag) -> Self {
        let (temporal_factor, spatial_factor) = match system {
            SystemTag::Ks => (5, 5),
            SystemTag::Brusselator => (5, 8),
            SystemTag::L96 => (1, 1),
        };
        Self {
            temporal_factor,
            spatial_factor,
            system,
        }
    }
}

/// Mean of each non-overlapping block of `factor` consecutive values.
pub fn block_mean_1d(field: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || !field.len().is_multiple_of(factor) {
        return Err(Error::invalid(format!(
            "block factor {factor} does not divide extent {}",
            field.len()
        )));
    }
    let inv = 1.0 / factor as f64;
    Ok(field
        .chunks_exact(factor)
        .map(|c| c.iter().sum::<f64>() * inv)
        .collect())
}

/// Mean of each `factor × factor` block of a row-major `side × side` field.
pub fn block_mean_2d(field: &[f64], side: usize, factor: usize) -> Result<Vec<f64>> {
    if field.len() != side * side {
        return Err(Error::shape(format!(
            "field of {} values is not {side}x{side}",
            field.len()
        )));
    }
    if factor == 0 || !side.is_multiple_of(factor) {
        return Err(Error::invalid(format!(
            "block factor {factor} does not divide side {side}"
        )));
    }
    let out_side = side / factor;
    let mut out = vec![0.0; out_side * out_side];
    for row in 0..side {
        let orow = row / factor;
        for col in 0..side {
            out[orow * out_side + col / factor] += field[row * side + col];
        }
    }
    let inv = 1.0 / (factor * factor) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Spatial block mean of one state. Brusselator fields are averaged separately.
pub fn spatial_block_mean(state: &[f64], layout: Layout, factor: usize) -> Result<Vec<f64>> {
    if state.len() != layout.len() {
        return Err(Error::shape(format!(
            "state has {} values, layout needs {}",
            state.len(),
            layout.len()
        )));
    }
    match layout {
        Layout::Ks { .. } => block_mean_1d(state, factor),
        Layout::Brusselator { side } => {
            let (u, v) = state.split_at(side * side);
            let mut out = block_mean_2d(u, side, factor)?;
            out.extend(block_mean_2d(v, side, factor)?);
            Ok(out)
        }
        Layout::L96 { .. } => Err(Error::invalid(
            "L96 states are split by role, not block-averaged",
        )),
    }
}

/// Non-overlapping window means along time.
pub fn temporal_block_mean(seq: &Series, factor: usize) -> Result<Series> {
    if factor == 0 || !seq.len().is_multiple_of(factor) {
        return Err(Error::invalid(format!(
            "window {factor} does not divide sequence length {}",
            seq.len()
        )));
    }
    if factor == 1 {
        return Ok(seq.clone());
    }
    let dim = seq.dim();
    let inv = 1.0 / factor as f64;
    let mut out = Series::zeros(seq.len() / factor, dim);
    for w in 0..seq.len() / factor {
        let acc = out.row_mut(w);
        for t in w * factor..(w + 1) * factor {
            for (a, v) in acc.iter_mut().zip(seq.row(t)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    Ok(out)
}

/// Per-dimension affine normalization `z = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Fits mean and population standard deviation. Constant dimensions get
    /// scale 1.
    pub fn fit(data: &Series) -> Result<Self> {
        let n = data.len();
        if n == 0 {
            return Err(Error::invalid(
                "cannot fit a standardizer on an empty series",
            ));
        }
        let dim = data.dim();
        let mut mean = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for i in 0..dim {
            let first = data.row(0)[i];
            if data.rows().all(|r| r[i] == first) {
                mean[i] = first;
                continue;
            }
            let mu = data.rows().map(|r| r[i]).sum::<f64>() / n as f64;
            let var = data.rows().map(|r| (r[i] - mu).powi(2)).sum::<f64>() / n as f64;
            mean[i] = mu;
            let sd = var.sqrt();
            if sd > 1e-12 * mu.abs().max(1.0) {
                scale[i] = sd;
            }
        }
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for i in 0..row.len() {
            out[i] = (row[i] - self.mean[i]) / self.scale[i];
        }
    }

    pub fn invert_row(&self, row: &[f64], out: &mut [f64]) {
        for i in 0..row.len() {
            out[i] = row[i] * self.scale[i] + self.mean[i];
        }
    }

    pub fn apply(&self, data: &Series) -> Result<Series> {
        self.map(data, Self::apply_row)
    }

    pub fn invert(&self, data: &Series) -> Result<Series> {
        self.map(data, Self::invert_row)
    }

    fn map(&self, data: &Series, f: fn(&Self, &[f64], &mut [f64])) -> Result<Series> {
        if data.dim() != self.dim() {
            return Err(Error::shape(format!(
                "standardizer of width {} applied to series of width {}",
                self.dim(),
                data.dim()
            )));
        }
        let mut out = Series::zeros(data.len(), data.dim());
        for t in 0..data.len() {
            f(self, data.row(t), out.row_mut(t));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStandardizer {
    pub x: Standardizer,
    pub y: Standardizer,
}

/// Low-resolution `x` and high-resolution `y` on one coarse time grid.
///
/// Reads of `y` go through [`PairedDataset::y`], which records the access so
/// callers can prove that an X-only code path never touched it.
#[derive(Debug)]
pub struct PairedDataset {
    pub system: SystemTag,
    pub x: Series,
    y: Series,
    /// Spatial refinement factor: `y.dim() == x.dim() * m`.
    pub m: usize,
    pub dt_coarse: f64,
    pub standardizer: Option<PairStandardizer>,
    y_read: AtomicBool,
}

impl Clone for PairedDataset {
    fn clone(&self) -> Self {
        Self {
            system: self.system,
            x: self.x.clone(),
            y: self.y.clone(),
            m: self.m,
            dt_coarse: self.dt_coarse,
            standardizer: self.standardizer.clone(),
            y_read: AtomicBool::new(false),
        }
    }
}

impl PairedDataset {
    pub fn new(system: SystemTag, x: Series, y: Series, dt_coarse: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::shape(format!(
                "X has {} steps but Y has {}",
                x.len(),
                y.len()
            )));
        }
        if !y.dim().is_multiple_of(x.dim()) {
            return Err(Error::shape(format!(
                "Y width {} is not a multiple of X width {}",
                y.dim(),
                x.dim()
            )));
        }
        let m = y.dim() / x.dim();
        Ok(Self {
            system,
            x,
            y,
            m,
            dt_coarse,
            standardizer: None,
            y_read: AtomicBool::new(false),
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn d(&self) -> usize {
        self.x.dim()
    }

    pub fn y(&self) -> &Series {
        self.y_read.store(true, Ordering::SeqCst);
        &self.y
    }

    pub fn y_was_read(&self) -> bool {
        self.y_read.load(Ordering::SeqCst)
    }

    /// Row range `[start, end)` sharing this dataset's standardizer.
    pub fn segment(&self, start: usize, end: usize) -> PairedDataset {
        PairedDataset {
            system: self.system,
            x: self.x.slice(start, end),
            y: self.y.slice(start, end),
            m: self.m,
            dt_coarse: self.dt_coarse,
            standardizer: self.standardizer.clone(),
            y_read: AtomicBool::new(false),
        }
    }

    /// Standardized copy of X, using the attached statistics.
    pub fn x_standardized(&self) -> Result<Series> {
        match &self.standardizer {
            Some(s) => s.x.apply(&self.x),
            None => Err(Error::invalid("dataset has no fitted standardizer")),
        }
    }

    pub fn y_standardized(&self) -> Result<Series> {
        match &self.standardizer {
            Some(s) => s.y.apply(self.y()),
            None => Err(Error::invalid("dataset has no fitted standardizer")),
        }
    }
}

/// Averages a fine trajectory into `(X, Y)` pairs.
///
/// For the PDE systems `Y` is the temporal window mean at full spatial
/// resolution and `X` is the spatial block mean of `Y`. For L96, `X` holds
/// the slow variables and `Y` the fast ones.
pub fn build_paired_dataset(fine: &FineTrajectory, spec: &CoarsenSpec) -> Result<PairedDataset> {
    let layout_tag = match fine.layout {
        Layout::Ks { .. } => SystemTag::Ks,
        Layout::Brusselator { .. } => SystemTag::Brusselator,
        Layout::L96 { .. } => SystemTag::L96,
    };
    if layout_tag != spec.system {
        return Err(Error::shape(format!(
            "coarsening spec for {} applied to a {} trajectory",
            spec.system, layout_tag
        )));
    }
    if fine.states.dim() != fine.layout.len() {
        return Err(Error::shape("trajectory width does not match its layout"));
    }
    let windowed = temporal_block_mean(&fine.states, spec.temporal_factor)?;
    let dt_coarse = fine.dt * spec.temporal_factor as f64;
    match fine.layout {
        Layout::L96 { k, j } => {
            let mut x = Series::zeros(0, k);
            let mut y = Series::zeros(0, k * j);
            for row in windowed.rows() {
                x.push_row(&row[..k]);
                y.push_row(&row[k..]);
            }
            PairedDataset::new(SystemTag::L96, x, y, dt_coarse)
        }
        layout => {
            let d = spatial_block_mean(windowed.row(0), layout, spec.spatial_factor)?.len();
            let mut x = Series::zeros(0, d);
            for row in windowed.rows() {
                x.push_row(&spatial_block_mean(row, layout, spec.spatial_factor)?);
            }
            PairedDataset::new(spec.system, x, windowed, dt_coarse)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_len: usize,
    pub val_len: usize,
    pub holdout_len: usize,
    pub buffer_len: usize,
}

impl SplitPlan {
    pub fn total(&self) -> usize {
        self.train_len + self.val_len + self.holdout_len + 2 * self.buffer_len
    }

    pub fn train_range(&self) -> (usize, usize) {
        (0, self.train_len)
    }

    pub fn val_range(&self) -> (usize, usize) {
        let s = self.train_len + self.buffer_len;
        (s, s + self.val_len)
    }

    pub fn holdout_range(&self) -> (usize, usize) {
        let s = self.val_range().1 + self.buffer_len;
        (s, s + self.holdout_len)
    }
}

/// `[train][buffer][val][buffer][holdout]`, remainder discarded.
pub fn split_with_buffer(
    ds: &PairedDataset,
    plan: &SplitPlan,
) -> Result<(PairedDataset, PairedDataset, PairedDataset)> {
    if plan.total() > ds.len() {
        return Err(Error::invalid(format!(
            "split plan needs {} steps but the dataset has {}",
            plan.total(),
            ds.len()
        )));
    }
    let seg = |(a, b): (usize, usize)| ds.segment(a, b);
    Ok((
        seg(plan.train_range()),
        seg(plan.val_range()),
        seg(plan.holdout_range()),
    ))
}

/// Fits X and Y statistics on `train` only.
pub fn fit_standardizer(train: &PairedDataset) -> Result<PairStandardizer> {
    Ok(PairStandardizer {
        x: Standardizer::fit(&train.x)?,
        y: Standardizer::fit(train.y())?,
    })
}
