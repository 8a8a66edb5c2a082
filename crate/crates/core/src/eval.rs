//! Candidate evaluation interface.
//!
//! The search algorithms never call an environment directly; they hand
//! parameter vectors to an [`Evaluator`] and get back a scalar score
//! plus a frame count. Everything downstream (ranking, recombination,
//! gradient estimation) treats the score as opaque.

use crate::error::Result;
use crate::vector::ParamVector;

/// Score assigned to a candidate whose evaluation failed. The most
/// negative finite value: it loses every comparison, so a failed
/// candidate is never selected, while sums over scores stay finite.
pub const WORST_SCORE: f64 = f64::MIN;

/// Outcome of evaluating one parameter vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Higher is better everywhere in this crate; minimization problems
    /// are negated at the evaluator boundary.
    pub score: f64,
    /// Environment frames consumed, counted against the frame budget.
    /// Function benchmarks report 1 per call.
    pub frames: u64,
}

/// A deterministic scoring function: the same `(params, seed)` pair
/// must always produce the same evaluation. All stochasticity (initial
/// state, start offsets, observation noise) must flow from `seed`.
pub trait Evaluator: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, params: &ParamVector, seed: u64) -> Result<Evaluation>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&self, params: &ParamVector, seed: u64) -> Result<Evaluation> {
        (**self).evaluate(params, seed)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for std::sync::Arc<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&self, params: &ParamVector, seed: u64) -> Result<Evaluation> {
        (**self).evaluate(params, seed)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&self, params: &ParamVector, seed: u64) -> Result<Evaluation> {
        (**self).evaluate(params, seed)
    }
}
