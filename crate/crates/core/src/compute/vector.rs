use std::ops::{Deref, DerefMut, Range};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Non-empty dense vector of scalars; the carrier for parameters, momenta,
/// gradients and extracted components.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector<T>(Vec<T>);

impl<T: Scalar> DenseVector<T> {
    pub fn new(data: Vec<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Dimension("vector must have length > 0".into()));
        }
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector must have length > 0");
        Self(vec![T::zero(); len])
    }

    pub fn from_slice(data: &[T]) -> Result<Self> {
        Self::new(data.to_vec())
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn norm_squared(&self) -> T {
        self.0.iter().map(|&x| x * x).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect(),
        ))
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(&a, &b)| a + b).collect(),
        ))
    }

    pub fn scale(&self, a: T) -> Self {
        Self(self.0.iter().map(|&x| a * x).collect())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: T, x: &Self) -> Result<()> {
        self.check_len(x)?;
        for (y, &xi) in self.0.iter_mut().zip(&x.0) {
            *y = *y + a * xi;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_len(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Bit-level equality (distinguishes `-0.0` from `0.0`, equates identical NaNs).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.bits() == b.bits())
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.0.len() || range.is_empty() {
            return Err(Error::Dimension(format!(
                "slice {range:?} out of bounds for length {}",
                self.0.len()
            )));
        }
        Ok(Self(self.0[range].to_vec()))
    }

    pub fn concat(parts: &[Self]) -> Result<Self> {
        Self::new(parts.iter().flat_map(|p| p.0.iter().copied()).collect())
    }

    /// Element-wise arithmetic mean of equal-length vectors, summed in the given order.
    pub fn mean_of(vectors: &[&Self]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::Dimension("mean of zero vectors".into()))?;
        let mut acc = (*first).clone();
        for v in &vectors[1..] {
            acc.check_len(v)?;
            for (a, &b) in acc.0.iter_mut().zip(&v.0) {
                *a = *a + b;
            }
        }
        let n = T::from_usize_lossy(vectors.len());
        for a in acc.0.iter_mut() {
            *a = *a / n;
        }
        Ok(acc)
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::Dimension(format!(
                "length {} vs {}",
                self.0.len(),
                other.0.len()
            )));
        }
        Ok(())
    }
}

impl<T> Deref for DenseVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for DenseVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// New matrix holding the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}
