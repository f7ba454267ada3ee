use serde::{Deserialize, Serialize};

use crate::numerics;

/// Flat parameter vector with its Euclidean norm cached at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    data: Vec<f64>,
    rho: f64,
}

impl ParamVector {
    pub fn new(data: Vec<f64>) -> Self {
        let rho = numerics::norm(&data);
        Self { data, rho }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Euclidean norm ρ.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Unit direction θ/ρ. Returns the zero vector when ρ = 0.
    pub fn direction(&self) -> Vec<f64> {
        if self.rho == 0.0 {
            return vec![0.0; self.data.len()];
        }
        self.data.iter().map(|x| x / self.rho).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.data.iter().map(|x| c * x).collect())
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &[f64]) -> Self {
        debug_assert_eq!(self.data.len(), other.len());
        Self::new(self.data.iter().zip(other).map(|(a, b)| a + c * b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self::new(v)
    }
}
