//! Mirrored-sampling search-gradient evolution strategy.
//!
//! Each iteration draws `lambda / 2` offsets and evaluates both signs
//! of each, ranks all `lambda` scores into `[0, 1)`, and forms the
//! gradient estimate `g = (1 / (sigma * lambda)) * sum_i r_i * s_i *
//! eps_i` (sign `s_i`, rank `r_i`). The estimate feeds an Adam ascent
//! step, followed by multiplicative weight decay.
//!
//! The estimator is computed pairwise: each mirrored pair contributes
//! `(r_plus - r_minus) * eps`. That form is algebraically identical to
//! the signed sum but makes two invariants exact in floating point:
//! adding a constant to every rank cancels inside the pair difference,
//! and a pair with equal ranks contributes exactly nothing.

use crate::distrib::{EvalBackend, IterationJob};
use crate::error::{Error, Result};
use crate::noise::{NoiseIndex, NoiseTable, Sign};
use crate::optimizer::{adam_step, AdamHyper, OptimizerState};
use crate::rng::RngStream;
use crate::run::{drive_run, valid_mean, Budget, EsState, RunObserver, RunOutcome, StepStats};
use crate::seeds;
use crate::shaping::normalized_ranks;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NesConfig {
    /// Offspring per iteration; even, because offspring come in
    /// mirrored pairs.
    pub lambda: usize,
    /// Perturbation scale.
    pub sigma: f32,
    /// Multiplicative parameter decay applied after each optimizer
    /// step: `theta *= 1 - weight_decay`.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f32,
    #[serde(default)]
    pub adam: AdamHyper,
}

fn default_weight_decay() -> f32 {
    0.005
}

impl Default for NesConfig {
    fn default() -> Self {
        NesConfig {
            lambda: 32,
            sigma: 0.05,
            weight_decay: default_weight_decay(),
            adam: AdamHyper::default(),
        }
    }
}

impl NesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 2 || self.lambda % 2 != 0 {
            return Err(Error::invalid_config(format!(
                "lambda must be even and at least 2, got {}",
                self.lambda
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid_config("sigma must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(Error::invalid_config("weight_decay must lie in [0, 1)"));
        }
        self.adam.validate()
    }
}

/// Draws `lambda / 2` offsets and expands each into a (+, -) pair of
/// adjacent slots, so slot `2k` and `2k + 1` always share an offset.
pub fn mirrored_offspring(
    table: &NoiseTable,
    rng: &mut RngStream,
    lambda: usize,
    dim: usize,
) -> Result<Vec<NoiseIndex>> {
    if lambda < 2 || lambda % 2 != 0 {
        return Err(Error::invalid_config(format!(
            "mirrored population size must be even and at least 2, got {lambda}"
        )));
    }
    let half = table.draw_offsets(rng, lambda / 2, dim)?;
    Ok(half.into_iter().flat_map(|i| [i, i.mirrored()]).collect())
}

/// Gradient estimate from mirrored, ranked scores. `indices` must be
/// the pair-adjacent layout produced by [`mirrored_offspring`];
/// `ranks[i]` is the rank of slot `i`. Accumulation is f64 per
/// coordinate, rounded to f32 once at the end.
pub fn estimate_gradient(
    table: &NoiseTable,
    indices: &[NoiseIndex],
    ranks: &[f64],
    sigma: f32,
    dim: usize,
) -> Result<Vec<f32>> {
    if indices.len() != ranks.len() {
        return Err(Error::invalid_config(format!(
            "{} indices vs {} ranks",
            indices.len(),
            ranks.len()
        )));
    }
    if indices.is_empty() || indices.len() % 2 != 0 {
        return Err(Error::invalid_config("population must be nonempty mirrored pairs"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid_config("sigma must be positive and finite"));
    }
    let mut acc = vec![0.0f64; dim];
    for pair in 0..indices.len() / 2 {
        let plus = indices[2 * pair];
        let minus = indices[2 * pair + 1];
        if plus.sign != Sign::Plus || minus.sign != Sign::Minus || plus.offset != minus.offset {
            return Err(Error::invalid_config(format!(
                "slots {} and {} do not form a mirrored pair",
                2 * pair,
                2 * pair + 1
            )));
        }
        let delta = ranks[2 * pair] - ranks[2 * pair + 1];
        if delta == 0.0 {
            continue;
        }
        let eps = table.raw_slice(plus.offset, dim)?;
        for (a, &e) in acc.iter_mut().zip(eps) {
            *a += delta * e as f64;
        }
    }
    let scale = 1.0 / (sigma as f64 * indices.len() as f64);
    Ok(acc.into_iter().map(|a| (a * scale) as f32).collect())
}

/// Runs the strategy until the budget (or the observer) stops it. An
/// Adam state is created on first use and carried in `state` across
/// resumes.
pub fn run_nes(
    config: &NesConfig,
    state: &mut EsState,
    table: &NoiseTable,
    backend: &mut dyn EvalBackend,
    run_seed: u64,
    budget: &Budget,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    config.validate()?;
    let dim = state.params.dim();
    match &state.optimizer {
        None => state.optimizer = Some(OptimizerState::adam(dim)),
        Some(opt) if opt.dim() != dim => {
            return Err(Error::DimensionMismatch { expected: dim, got: opt.dim() });
        }
        Some(OptimizerState::Momentum { .. }) => {
            return Err(Error::invalid_config("this strategy uses Adam state"));
        }
        Some(OptimizerState::Adam { .. }) => {}
    }
    let decay = 1.0 - config.weight_decay;
    let lambda = config.lambda;
    let sigma = config.sigma;
    drive_run(state, budget, observer, &mut |state: &mut EsState| {
        let mut stream = seeds::offsets_stream(run_seed, state.iteration);
        let indices = mirrored_offspring(table, &mut stream, lambda, dim)?;
        let job = IterationJob {
            iteration: state.iteration,
            center: &state.params,
            sigma,
            indices: &indices,
            run_seed,
        };
        let scores = backend.evaluate_population(&job)?;
        let center = backend.evaluate_center(state.iteration, &state.params, run_seed)?;
        let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
        let ranks = normalized_ranks(&values);
        let grad = estimate_gradient(table, &indices, &ranks, sigma, dim)?;
        let optimizer = state.optimizer.as_mut().expect("initialized above");
        adam_step(optimizer, &mut state.params, &grad, &config.adam)?;
        if config.weight_decay > 0.0 {
            state.params.scale(decay);
        }
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let frames_added = scores.iter().map(|s| s.frames).sum::<u64>() + center.frames;
        Ok(StepStats {
            offspring_best: best,
            offspring_mean: valid_mean(&scores),
            center_score: center.score,
            frames_added,
        })
    })
}
