//! Dense parameter vectors.
//!
//! Everything in this crate works on plain `f64` coordinates. The newtype
//! exists so that dimensions are checked at the few places where two vectors
//! meet, and so that norm/arithmetic helpers live in one spot.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Index, Mul, Sub};

/// Dense vector of `f64` coordinates, dimension at least one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Wraps a coordinate vector. Panics on an empty vector: a zero-dimensional
    /// parameter space is always a caller bug.
    pub fn new(coords: Vec<f64>) -> Self {
        assert!(!coords.is_empty(), "weight vector must have dimension >= 1");
        WeightVector(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Squared Euclidean norm, summed in coordinate order.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &WeightVector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch in dot product");
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    /// True iff every coordinate is finite (no NaN, no infinities).
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// `self + alpha * other`, in place.
    pub fn axpy(&mut self, alpha: f64, other: &WeightVector) {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch in axpy");
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += alpha * b;
        }
    }

    /// Elementwise map, preserving dimension.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> WeightVector {
        WeightVector(self.0.iter().map(|&x| f(x)).collect())
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(coords: Vec<f64>) -> Self {
        WeightVector::new(coords)
    }
}

impl Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &WeightVector {
    type Output = WeightVector;
    fn add(self, rhs: &WeightVector) -> WeightVector {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in add");
        WeightVector(self.0.iter().zip(rhs.0.iter()).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &WeightVector {
    type Output = WeightVector;
    fn sub(self, rhs: &WeightVector) -> WeightVector {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in sub");
        WeightVector(self.0.iter().zip(rhs.0.iter()).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &WeightVector {
    type Output = WeightVector;
    fn mul(self, s: f64) -> WeightVector {
        WeightVector(self.0.iter().map(|a| a * s).collect())
    }
}
