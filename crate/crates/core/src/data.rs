//! Row-major data matrices.

use crate::error::{ensure_all_finite, Error, Result};

/// A dense row-major matrix of `f64` observations, one example per row.
///
/// Rows may carry stable example ids; when absent, the row index is the id.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    ids: Option<Vec<u64>>,
}

impl DataMatrix {
    /// Wraps a row-major buffer of `rows * cols` finite values.
    pub fn new(values: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("data matrix"));
        }
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        ensure_all_finite(&values, "data matrix")?;
        Ok(DataMatrix {
            values,
            rows,
            cols,
            ids: None,
        })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("data matrix rows"))?;
        let cols = first.len();
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::LengthMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        DataMatrix::new(values, rows.len(), cols)
    }

    /// Attaches explicit example ids; must match the row count.
    pub fn with_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.rows {
            return Err(Error::LengthMismatch {
                expected: self.rows,
                got: ids.len(),
            });
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Borrows row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Id of row `i`; defaults to the row index.
    pub fn id(&self, i: usize) -> u64 {
        match &self.ids {
            Some(ids) => ids[i],
            None => i as u64,
        }
    }

    /// Iterates over rows in order.
    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }

    /// The underlying row-major buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Per-column means; single pass in row order.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (m, x) in means.iter_mut().zip(row) {
                *m += x;
            }
        }
        let n = self.rows as f64;
        for m in &mut means {
            *m /= n;
        }
        means
    }
}
