//! Flat parameter vectors.
//!
//! Parameters are stored as `f32` to keep noise tables and network
//! weights compact; reductions that sum over the population or the
//! dimension accumulate in `f64` to keep rounding error independent of
//! problem size.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A dense parameter vector. The only invariant is finiteness: NaN or
/// infinite entries would silently poison every downstream score, so
/// they are rejected at the boundary instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f32>);

impl ParamVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    /// Returns `self + factor * noise` without touching `self`.
    /// `factor * noise[i]` is rounded once before the add, so the
    /// perturbation applied equals the one a mirrored twin negates.
    pub fn perturbed(&self, noise: &[f32], factor: f32) -> Result<ParamVector> {
        self.check_dim(noise.len())?;
        let values = self
            .0
            .iter()
            .zip(noise)
            .map(|(&t, &n)| t + factor * n)
            .collect();
        Ok(ParamVector(values))
    }

    /// In-place `self += factor * other`.
    pub fn add_scaled(&mut self, other: &[f32], factor: f32) -> Result<()> {
        self.check_dim(other.len())?;
        for (t, &o) in self.0.iter_mut().zip(other) {
            *t += factor * o;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        for t in &mut self.0 {
            *t *= factor;
        }
    }

    /// Sum of squares accumulated in f64.
    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|&v| v as f64 * v as f64).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, got: usize) -> Result<()> {
        if self.0.len() != got {
            return Err(Error::DimensionMismatch {
                expected: self.0.len(),
                got,
            });
        }
        Ok(())
    }
}

impl AsRef<[f32]> for ParamVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}
