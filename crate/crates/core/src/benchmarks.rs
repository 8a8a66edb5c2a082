//! Synthetic objective functions for exercising the search algorithms
//! without an environment. All are minimization problems; the evaluator
//! negates them so that higher scores are better, matching the rest of
//! the crate.

use crate::error::Result;
use crate::eval::{Evaluation, Evaluator};
use crate::rng::{normal_from_bits, RngStream};
use crate::vector::ParamVector;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Sum of squares; minimum 0 at the origin.
pub fn sphere(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64 * v as f64).sum()
}

/// Classic banana valley; minimum 0 at all-ones.
pub fn rosenbrock(x: &[f32]) -> f64 {
    x.windows(2)
        .map(|w| {
            let (a, b) = (w[0] as f64, w[1] as f64);
            100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    Sphere,
    Rosenbrock,
    /// Sphere plus seed-determined Gaussian observation noise, for
    /// exercising the algorithms under noisy scores.
    NoisySphere,
}

/// Evaluator wrapping one benchmark function. Scores are the negated
/// objective. Each call reports one frame so frame budgets remain
/// meaningful on benchmarks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionEvaluator {
    pub kind: BenchmarkKind,
    pub dim: usize,
    /// Standard deviation of the observation noise for `NoisySphere`;
    /// ignored by the deterministic benchmarks.
    pub noise_sigma: f32,
}

impl FunctionEvaluator {
    pub fn new(kind: BenchmarkKind, dim: usize) -> Self {
        FunctionEvaluator { kind, dim, noise_sigma: 0.1 }
    }
}

impl Evaluator for FunctionEvaluator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, params: &ParamVector, seed: u64) -> Result<Evaluation> {
        let x = params.as_slice();
        let objective = match self.kind {
            BenchmarkKind::Sphere => sphere(x),
            BenchmarkKind::Rosenbrock => rosenbrock(x),
            BenchmarkKind::NoisySphere => {
                let mut rng = RngStream::new(seed, 0);
                sphere(x) + self.noise_sigma as f64 * normal_from_bits(rng.next_u64()) as f64
            }
        };
        Ok(Evaluation { score: -objective, frames: 1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_spot_values() {
        assert_eq!(sphere(&[]), 0.0);
        assert_eq!(sphere(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(sphere(&[1.0, 2.0]), 5.0);
        assert_eq!(sphere(&[-3.0]), 9.0);
    }

    #[test]
    fn rosenbrock_spot_values() {
        assert_eq!(rosenbrock(&[1.0, 1.0, 1.0]), 0.0);
        assert_eq!(rosenbrock(&[0.0, 0.0]), 1.0);
        // d=2 at (-1, 1): 100*(1-1)^2 + (1-(-1))^2 = 4.
        assert_eq!(rosenbrock(&[-1.0, 1.0]), 4.0);
    }

    #[test]
    fn evaluator_negates_objective() {
        let eval = FunctionEvaluator::new(BenchmarkKind::Sphere, 2);
        let p = ParamVector::new(vec![1.0, 2.0]).unwrap();
        let e = eval.evaluate(&p, 0).unwrap();
        assert_eq!(e.score, -5.0);
        assert_eq!(e.frames, 1);
    }

    #[test]
    fn noisy_sphere_is_deterministic_per_seed() {
        let eval = FunctionEvaluator::new(BenchmarkKind::NoisySphere, 2);
        let p = ParamVector::new(vec![0.5, -0.5]).unwrap();
        let a = eval.evaluate(&p, 7).unwrap();
        let b = eval.evaluate(&p, 7).unwrap();
        let c = eval.evaluate(&p, 8).unwrap();
        assert_eq!(a.score, b.score);
        assert_ne!(a.score, c.score);
    }

    #[test]
    fn noisy_sphere_noise_has_configured_scale() {
        let eval = FunctionEvaluator::new(BenchmarkKind::NoisySphere, 1);
        let p = ParamVector::zeros(1);
        let n = 20_000;
        let samples: Vec<f64> =
            (0..n).map(|s| eval.evaluate(&p, s).unwrap().score).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.01, "std {}", var.sqrt());
    }
}
