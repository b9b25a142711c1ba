//! Dense time-major sequences of fixed-width state vectors.

use crate::error::{Error, Result};

/// A sequence of `len()` rows, each of width `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    dim: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::shape("series width must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::shape(format!(
                "buffer of {} values is not a whole number of rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        assert!(dim > 0, "series width must be positive");
        Self {
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::shape("cannot infer width of an empty row list"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::shape(format!(
                    "row of width {} in series of width {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Series::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row width");
        self.data.extend_from_slice(row);
    }

    /// Rows `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Series {
        assert!(
            start <= end && end <= self.len(),
            "slice {start}..{end} of {}",
            self.len()
        );
        Series {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
