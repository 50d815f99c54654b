//! Dense row-major integer matrix, sized for per-county workloads.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<i64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut i64 {
        &mut self.data[r * self.cols + c]
    }

    /// Copy of column `c`, top to bottom.
    pub fn column(&self, c: usize) -> Vec<i64> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    pub fn column_sum(&self, c: usize) -> i64 {
        (0..self.rows).map(|r| self.at(r, c)).sum()
    }

    pub fn total(&self) -> i64 {
        self.data.iter().sum()
    }

    pub fn values(&self) -> &[i64] {
        &self.data
    }
}
