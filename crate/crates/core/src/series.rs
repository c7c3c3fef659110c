//! Dense row-major time series storage.

use crate::error::{Error, Result};

/// A sequence of fixed-dimension vectors stored contiguously, row per time
/// index. Used for both latent-state paths and observation records.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    data: Vec<f64>,
    dim: usize,
}

impl Series {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("series dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "series data length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        Ok(Series { data, dim })
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Series {
            data: Vec::with_capacity(dim * rows),
            dim,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row length must equal series dim");
        self.data.extend_from_slice(row);
    }

    /// Number of rows (time steps).
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Cyclic repetition of the whole record, `m` times.
    pub fn repeat(&self, m: usize) -> Series {
        let mut data = Vec::with_capacity(self.data.len() * m);
        for _ in 0..m {
            data.extend_from_slice(&self.data);
        }
        Series {
            data,
            dim: self.dim,
        }
    }
}
