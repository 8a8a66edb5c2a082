//! Derivative-free policy search built on evolution strategies.
//!
//! The crate provides two search algorithms over a shared evaluation
//! substrate: a weighted-recombination (mu, lambda) strategy and a
//! mirrored-sampling gradient estimator with Adam. Perturbations come
//! from a precomputed Gaussian noise table, so a candidate is described
//! by an offset and a sign instead of a full parameter vector. On top of
//! that sit forward-only policy networks with virtual batch
//! normalization, frame preprocessing for pixel environments, rollout
//! machinery, a master/worker distribution layer, and an experiment
//! driver with evaluation statistics.

pub mod benchmarks;
pub mod canonical;
pub mod checkpoint;
pub mod distrib;
pub mod envs;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nes;
pub mod noise;
pub mod optimizer;
pub mod policy;
pub mod preprocess;
pub mod rollout;
pub mod rng;
pub mod run;
pub mod seeds;
pub mod shaping;
pub mod vector;

pub use error::{Error, Result};
pub use eval::{Evaluation, Evaluator, WORST_SCORE};
pub use noise::{NoiseIndex, NoiseTable, Sign};
pub use rng::RngStream;
pub use run::{Budget, EsState, IterationStats, RunObserver, RunOutcome, StopReason, Verdict};
pub use vector::ParamVector;
