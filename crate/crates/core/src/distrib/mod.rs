//! Population evaluation backends.
//!
//! A backend takes the center parameters plus the iteration's noise
//! indices and returns one score per slot. Slots are positions in the
//! index list; offsets can repeat within an iteration, so the slot is
//! the only reliable candidate identity. Backends must return scores
//! ordered by slot and derive rollout seeds from `(run_seed, iteration,
//! slot)` only, which makes every backend bitwise interchangeable with
//! every other.
//!
//! Two implementations exist: [`InProcBackend`] fans out over a rayon
//! pool in the current process; the `tcp` module drives remote workers
//! over sockets with the same observable behavior.

mod protocol;
mod tcp;

pub use protocol::{
    decode_message, encode_message, params_hash, read_message, write_message, Message,
    RunSetup, TableIdentity, WireAssignment, WireReport, PROTOCOL_VERSION,
};
pub use tcp::{run_worker, TcpMaster, TcpMasterConfig};

use crate::error::{Error, Result};
use crate::eval::{Evaluator, WORST_SCORE};
use crate::noise::{NoiseIndex, NoiseTable};
use crate::seeds;
use crate::vector::ParamVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One iteration's evaluation request.
pub struct IterationJob<'a> {
    pub iteration: u64,
    pub center: &'a ParamVector,
    pub sigma: f32,
    pub indices: &'a [NoiseIndex],
    pub run_seed: u64,
}

/// One worker's share of an iteration: parallel slot and index lists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    pub slots: Vec<usize>,
    pub indices: Vec<NoiseIndex>,
}

/// Partitions candidates across `worker_count` workers. Candidates are
/// grouped into consecutive pairs first, which keeps a mirrored pair
/// (two adjacent slots sharing an offset) on one worker, then pairs go
/// round-robin. With enough workers each gets exactly one pair; with
/// one worker the whole population lands in a single assignment.
pub fn dispatch_iteration(
    pending: &[(usize, NoiseIndex)],
    worker_count: usize,
) -> Vec<Assignment> {
    if pending.is_empty() || worker_count == 0 {
        return Vec::new();
    }
    let pair_count = pending.len().div_ceil(2);
    let assignment_count = worker_count.min(pair_count);
    let mut assignments = vec![Assignment::default(); assignment_count];
    for (pair_idx, pair) in pending.chunks(2).enumerate() {
        let target = &mut assignments[pair_idx % assignment_count];
        for &(slot, index) in pair {
            target.slots.push(slot);
            target.indices.push(index);
        }
    }
    assignments
}

/// Score for one slot. `frames` is what the rollout consumed; failed
/// evaluations report [`WORST_SCORE`] and zero frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotScore {
    pub slot: usize,
    pub score: f64,
    pub frames: u64,
}

pub trait EvalBackend {
    /// Evaluates every slot of the job. The result has exactly one
    /// entry per index, ordered by slot.
    fn evaluate_population(&mut self, job: &IterationJob<'_>) -> Result<Vec<SlotScore>>;

    /// Evaluates the unperturbed center once, on the seed reserved for
    /// the center slot.
    fn evaluate_center(
        &mut self,
        iteration: u64,
        center: &ParamVector,
        run_seed: u64,
    ) -> Result<SlotScore>;
}

/// Builds the candidate for a slot and scores it. Shared by the
/// in-process backend and remote workers so both produce identical
/// results for identical inputs. Evaluation errors are folded into the
/// sentinel score here: a lost candidate must not kill the iteration.
pub fn evaluate_slot<E: Evaluator + ?Sized>(
    evaluator: &E,
    table: &NoiseTable,
    center: &ParamVector,
    sigma: f32,
    run_seed: u64,
    iteration: u64,
    slot: usize,
    index: NoiseIndex,
) -> SlotScore {
    let seed = seeds::rollout_seed(run_seed, iteration, slot as u64);
    let result = table
        .raw_slice(index.offset, center.dim())
        .and_then(|noise| center.perturbed(noise, sigma * index.sign.factor()))
        .and_then(|candidate| evaluator.evaluate(&candidate, seed));
    match result {
        Ok(eval) => SlotScore { slot, score: eval.score, frames: eval.frames },
        Err(err) => {
            log::warn!("evaluation failed at iteration {iteration} slot {slot}: {err}");
            SlotScore { slot, score: WORST_SCORE, frames: 0 }
        }
    }
}

/// Scores the unperturbed center parameters.
pub fn evaluate_center_slot<E: Evaluator + ?Sized>(
    evaluator: &E,
    center: &ParamVector,
    run_seed: u64,
    iteration: u64,
) -> SlotScore {
    let seed = seeds::rollout_seed(run_seed, iteration, seeds::CENTER_SLOT);
    match evaluator.evaluate(center, seed) {
        Ok(eval) => SlotScore { slot: 0, score: eval.score, frames: eval.frames },
        Err(err) => {
            log::warn!("center evaluation failed at iteration {iteration}: {err}");
            SlotScore { slot: 0, score: WORST_SCORE, frames: 0 }
        }
    }
}

/// Validates that `scores` is one entry per slot in slot order.
pub fn check_slot_order(scores: &[SlotScore], expected: usize) -> Result<()> {
    if scores.len() != expected {
        return Err(Error::runtime(format!(
            "backend returned {} scores for {} slots",
            scores.len(),
            expected
        )));
    }
    for (i, s) in scores.iter().enumerate() {
        if s.slot != i {
            return Err(Error::runtime(format!("slot {} out of order at position {i}", s.slot)));
        }
    }
    Ok(())
}

/// Evaluates the population on the calling process's rayon pool.
pub struct InProcBackend<E> {
    evaluator: E,
    table: Arc<NoiseTable>,
}

impl<E: Evaluator> InProcBackend<E> {
    pub fn new(evaluator: E, table: Arc<NoiseTable>) -> Self {
        InProcBackend { evaluator, table }
    }

    pub fn table(&self) -> &NoiseTable {
        &self.table
    }
}

impl<E: Evaluator> EvalBackend for InProcBackend<E> {
    fn evaluate_population(&mut self, job: &IterationJob<'_>) -> Result<Vec<SlotScore>> {
        let scores: Vec<SlotScore> = job
            .indices
            .par_iter()
            .enumerate()
            .map(|(slot, &index)| {
                evaluate_slot(
                    &self.evaluator,
                    &self.table,
                    job.center,
                    job.sigma,
                    job.run_seed,
                    job.iteration,
                    slot,
                    index,
                )
            })
            .collect();
        check_slot_order(&scores, job.indices.len())?;
        Ok(scores)
    }

    fn evaluate_center(
        &mut self,
        iteration: u64,
        center: &ParamVector,
        run_seed: u64,
    ) -> Result<SlotScore> {
        Ok(evaluate_center_slot(&self.evaluator, center, run_seed, iteration))
    }
}
