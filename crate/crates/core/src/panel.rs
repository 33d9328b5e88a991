//! Time-indexed multivariate series with per-cell missingness.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sampling frequency of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Frequency {
    Weekly,
    Monthly,
}

/// A `T × p` panel; a non-finite cell means "missing".
#[derive(Debug, Clone, PartialEq)]
pub struct Panel<S: Scalar = f64> {
    values: DMatrix<S>,
    names: Vec<String>,
    frequency: Frequency,
}

impl<S: Scalar> Panel<S> {
    pub fn new(values: DMatrix<S>, names: Vec<String>, frequency: Frequency) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::Config(format!(
                "panel has {} columns but {} names",
                values.ncols(),
                names.len()
            )));
        }
        Ok(Self { values, names, frequency })
    }

    /// Builds a panel with generated column names `x1..xp`.
    pub fn from_matrix(values: DMatrix<S>, frequency: Frequency) -> Self {
        let names = (1..=values.ncols()).map(|i| format!("x{i}")).collect();
        Self { values, names, frequency }
    }

    pub fn nobs(&self) -> usize {
        self.values.nrows()
    }

    pub fn nseries(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<S> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<S> {
        &mut self.values
    }

    pub fn into_values(self) -> DMatrix<S> {
        self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> Option<S> {
        let v = self.values[(t, j)];
        v.is_finite_value().then_some(v)
    }

    pub fn is_missing(&self, t: usize, j: usize) -> bool {
        !self.values[(t, j)].is_finite_value()
    }

    /// True when no cell is missing.
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_finite_value())
    }

    /// Rows `start..end` as a new panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let values = self.values.rows(start, end - start).into_owned();
        Self { values, names: self.names.clone(), frequency: self.frequency }
    }

    /// The selected columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let values = self.values.select_columns(cols.iter());
        let names = cols.iter().map(|&j| self.names[j].clone()).collect();
        Self { values, names, frequency: self.frequency }
    }

    /// Horizontal concatenation; both panels must have the same length.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.nobs() != other.nobs() {
            return Err(Error::Config(format!(
                "cannot stack panels of length {} and {}",
                self.nobs(),
                other.nobs()
            )));
        }
        let mut values = DMatrix::zeros(self.nobs(), self.nseries() + other.nseries());
        values.columns_mut(0, self.nseries()).copy_from(&self.values);
        values.columns_mut(self.nseries(), other.nseries()).copy_from(&other.values);
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        Ok(Self { values, names, frequency: self.frequency })
    }

    /// First differences (`T-1` rows); missing if either endpoint is missing.
    pub fn diff(&self) -> Self {
        let n = self.nobs().saturating_sub(1);
        let values = DMatrix::from_fn(n, self.nseries(), |t, j| {
            self.values[(t + 1, j)] - self.values[(t, j)]
        });
        Self { values, names: self.names.clone(), frequency: self.frequency }
    }
}
