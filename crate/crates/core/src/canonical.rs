//! Weighted-recombination (mu, lambda) evolution strategy.
//!
//! Each iteration draws `lambda` perturbations from the noise table,
//! scores them, and moves the center toward the best `mu` by a
//! log-weighted average of their noise vectors:
//! `theta += sigma * sum_j w_j * eps_(j)`. The step size is fixed; no
//! step-size adaptation is performed. Selection sees only score order,
//! so the update is invariant to monotone transforms of the scores.

use crate::distrib::{EvalBackend, IterationJob, SlotScore};
use crate::error::{Error, Result};
use crate::eval::WORST_SCORE;
use crate::noise::{NoiseIndex, NoiseTable};
use crate::rng::RngStream;
use crate::run::{drive_run, valid_mean, Budget, EsState, RunObserver, RunOutcome, StepStats};
use crate::seeds;
use crate::shaping::recombination_weights;
use crate::vector::ParamVector;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalConfig {
    /// Offspring per iteration.
    pub lambda: usize,
    /// Parents recombined each iteration.
    pub mu: usize,
    /// Fixed perturbation and step scale.
    pub sigma: f32,
}

impl Default for CanonicalConfig {
    fn default() -> Self {
        CanonicalConfig { lambda: 32, mu: 8, sigma: 0.05 }
    }
}

impl CanonicalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda == 0 {
            return Err(Error::invalid_config("lambda must be at least 1"));
        }
        if self.mu == 0 || self.mu > self.lambda {
            return Err(Error::invalid_config(format!(
                "mu must lie in 1..=lambda, got mu={} lambda={}",
                self.mu, self.lambda
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid_config("sigma must be positive and finite"));
        }
        Ok(())
    }
}

/// An offspring with its evaluation, carried through selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredOffspring {
    pub slot: usize,
    pub index: NoiseIndex,
    pub score: f64,
}

/// Draws the iteration's `lambda` perturbation indices (all positive
/// sign; this algorithm does not mirror).
pub fn generate_offspring(
    table: &NoiseTable,
    rng: &mut RngStream,
    lambda: usize,
    dim: usize,
) -> Result<Vec<NoiseIndex>> {
    table.draw_offsets(rng, lambda, dim)
}

/// Pairs slot scores with their indices and sorts best-first. Ties
/// break toward the lower slot, so the ordering is total and
/// deterministic for any score multiset.
pub fn sort_by_score(indices: &[NoiseIndex], scores: &[SlotScore]) -> Vec<ScoredOffspring> {
    let mut scored: Vec<ScoredOffspring> = scores
        .iter()
        .map(|s| ScoredOffspring { slot: s.slot, index: indices[s.slot], score: s.score })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.slot.cmp(&b.slot)));
    scored
}

/// Applies the recombination update `theta += sigma * sum_i w_i *
/// eps_(i)` for the already-sorted top offspring. The weighted noise
/// sum is accumulated per coordinate in f64 and rounded once into the
/// f32 parameters.
pub fn recombine(
    theta: &mut ParamVector,
    table: &NoiseTable,
    sigma: f32,
    weights: &[f64],
    selected: &[ScoredOffspring],
) -> Result<()> {
    if weights.len() != selected.len() {
        return Err(Error::invalid_config(format!(
            "{} weights for {} selected offspring",
            weights.len(),
            selected.len()
        )));
    }
    let dim = theta.dim();
    let mut delta = vec![0.0f64; dim];
    for (w, off) in weights.iter().zip(selected) {
        let sign = off.index.sign.factor() as f64;
        let eps = table.raw_slice(off.index.offset, dim)?;
        let scaled_w = w * sign;
        for (d, &e) in delta.iter_mut().zip(eps) {
            *d += scaled_w * e as f64;
        }
    }
    let sigma = sigma as f64;
    for (p, d) in theta.as_mut_slice().iter_mut().zip(&delta) {
        *p = (*p as f64 + sigma * d) as f32;
    }
    Ok(())
}

/// Runs the strategy until the budget (or the observer) stops it.
/// Counters in `state` are cumulative, so a second call with a larger
/// budget continues the same run and reproduces what an uninterrupted
/// run would have done.
pub fn run_canonical(
    config: &CanonicalConfig,
    state: &mut EsState,
    table: &NoiseTable,
    backend: &mut dyn EvalBackend,
    run_seed: u64,
    budget: &Budget,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    config.validate()?;
    let weights = recombination_weights(config.mu)?;
    let lambda = config.lambda;
    let sigma = config.sigma;
    drive_run(state, budget, observer, &mut |state: &mut EsState| {
        let dim = state.params.dim();
        let mut stream = seeds::offsets_stream(run_seed, state.iteration);
        let indices = generate_offspring(table, &mut stream, lambda, dim)?;
        let job = IterationJob {
            iteration: state.iteration,
            center: &state.params,
            sigma,
            indices: &indices,
            run_seed,
        };
        let scores = backend.evaluate_population(&job)?;
        let center = backend.evaluate_center(state.iteration, &state.params, run_seed)?;
        let scored = sort_by_score(&indices, &scores);
        recombine(&mut state.params, table, sigma, &weights, &scored[..config.mu])?;
        let frames_added =
            scores.iter().map(|s| s.frames).sum::<u64>() + center.frames;
        Ok(StepStats {
            offspring_best: scored[0].score,
            offspring_mean: valid_mean(&scores),
            center_score: center.score,
            frames_added,
        })
    })
}

/// True when enough offspring succeeded that the top-`mu` selection
/// contains no sentinel, i.e. no failed candidate can influence the
/// update.
pub fn selection_clean(selected: &[ScoredOffspring]) -> bool {
    selected.iter().all(|s| s.score != WORST_SCORE)
}
