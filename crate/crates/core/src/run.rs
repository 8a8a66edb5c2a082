//! Shared run-loop machinery: budgets, per-iteration statistics, and
//! the observer hook through which callers checkpoint or stop early.

use crate::error::{Error, Result};
use crate::optimizer::OptimizerState;
use crate::vector::ParamVector;
use serde::{Deserialize, Serialize};

/// A stopping rule. Limits combine as "whatever comes first"; at least
/// one must be set or the run would never terminate on its own.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Total completed iterations (cumulative across resumes).
    pub iterations: Option<u64>,
    /// Total environment frames consumed (cumulative across resumes).
    pub frames: Option<u64>,
    /// Wall-clock seconds, counted from entry into the current run call.
    pub wall_seconds: Option<f64>,
}

impl Budget {
    pub fn iterations(n: u64) -> Self {
        Budget { iterations: Some(n), ..Budget::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations.is_none() && self.frames.is_none() && self.wall_seconds.is_none() {
            return Err(Error::invalid_config("budget must set at least one limit"));
        }
        if matches!(self.wall_seconds, Some(w) if !(w >= 0.0)) {
            return Err(Error::invalid_config("wall budget must be non-negative"));
        }
        Ok(())
    }

    /// Checks the limits in a fixed order so the reported reason is
    /// deterministic when several are hit in the same iteration.
    pub fn reached(&self, iteration: u64, frames: u64, wall_seconds: f64) -> Option<StopReason> {
        if matches!(self.iterations, Some(n) if iteration >= n) {
            return Some(StopReason::Iterations);
        }
        if matches!(self.frames, Some(n) if frames >= n) {
            return Some(StopReason::Frames);
        }
        if matches!(self.wall_seconds, Some(w) if wall_seconds >= w) {
            return Some(StopReason::WallClock);
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Iterations,
    Frames,
    WallClock,
    /// An observer asked to stop (e.g. a target score was reached).
    Observer,
}

/// Mutable state of a search run. Everything needed to continue the run
/// lives here (plus the noise table, which is reconstructed from its
/// seed); wall-clock time deliberately does not.
#[derive(Clone, Debug, PartialEq)]
pub struct EsState {
    pub params: ParamVector,
    /// Completed iterations.
    pub iteration: u64,
    /// Environment frames consumed so far, center evaluations included.
    pub frames: u64,
    /// Present for the gradient-based variant, absent for the
    /// recombination-based one.
    pub optimizer: Option<OptimizerState>,
}

impl EsState {
    pub fn new(params: ParamVector) -> Self {
        EsState { params, iteration: 0, frames: 0, optimizer: None }
    }
}

/// Statistics for one completed iteration. `iteration` counts completed
/// iterations, so the first row of a fresh run reads 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: u64,
    /// Best offspring score this iteration.
    pub offspring_best: f64,
    /// Mean over offspring whose evaluation succeeded.
    pub offspring_mean: f64,
    /// Score of the unperturbed center parameters.
    pub center_score: f64,
    /// Cumulative frames after this iteration.
    pub frames: u64,
    /// Seconds since the current run call started.
    pub wall_seconds: f64,
}

/// Observer verdict: keep going or stop after this iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Continue,
    Stop,
}

pub trait RunObserver {
    fn on_iteration(&mut self, stats: &IterationStats, state: &EsState) -> Result<Verdict>;
}

/// Observer that never interferes.
pub struct NullObserver;

impl RunObserver for NullObserver {
    fn on_iteration(&mut self, _stats: &IterationStats, _state: &EsState) -> Result<Verdict> {
        Ok(Verdict::Continue)
    }
}

impl<F> RunObserver for F
where
    F: FnMut(&IterationStats, &EsState) -> Result<Verdict>,
{
    fn on_iteration(&mut self, stats: &IterationStats, state: &EsState) -> Result<Verdict> {
        self(stats, state)
    }
}

/// What a finished run call reports. The final state lives in the
/// `EsState` the caller passed in.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub history: Vec<IterationStats>,
    pub stop: StopReason,
}

/// What one iteration hands back to the driver.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub offspring_best: f64,
    pub offspring_mean: f64,
    pub center_score: f64,
    pub frames_added: u64,
}

/// Shared outer loop of both algorithms: check the budget, run one
/// iteration step, account frames and time, notify the observer.
/// Counters are cumulative, so calling this again with a larger budget
/// resumes exactly where the previous call stopped.
pub fn drive_run(
    state: &mut EsState,
    budget: &Budget,
    observer: &mut dyn RunObserver,
    step: &mut dyn FnMut(&mut EsState) -> Result<StepStats>,
) -> Result<RunOutcome> {
    budget.validate()?;
    let started = std::time::Instant::now();
    let mut history = Vec::new();
    let stop = loop {
        let wall = started.elapsed().as_secs_f64();
        if let Some(reason) = budget.reached(state.iteration, state.frames, wall) {
            break reason;
        }
        let step_stats = step(state)?;
        state.iteration += 1;
        state.frames += step_stats.frames_added;
        let stats = IterationStats {
            iteration: state.iteration,
            offspring_best: step_stats.offspring_best,
            offspring_mean: step_stats.offspring_mean,
            center_score: step_stats.center_score,
            frames: state.frames,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        history.push(stats);
        if observer.on_iteration(&stats, state)? == Verdict::Stop {
            break StopReason::Observer;
        }
    };
    Ok(RunOutcome { history, stop })
}

/// Mean over offspring whose evaluation succeeded; the sentinel score
/// of failed candidates would otherwise swamp the statistic. All-failed
/// iterations report the sentinel itself.
pub fn valid_mean(scores: &[crate::distrib::SlotScore]) -> f64 {
    let valid: Vec<f64> = scores
        .iter()
        .map(|s| s.score)
        .filter(|&s| s != crate::eval::WORST_SCORE)
        .collect();
    if valid.is_empty() {
        crate::eval::WORST_SCORE
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    }
}
