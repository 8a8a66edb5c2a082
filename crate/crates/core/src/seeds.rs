//! Stateless seed derivations.
//!
//! Every random stream in a run is derived from the run seed plus a
//! purpose tag and position, never from generator state. Iteration `t`
//! can therefore be replayed, resumed, or evaluated on a remote worker
//! without replaying iterations `0..t`.

use crate::rng::{derive_seed, RngStream};

const TAG_OFFSETS: u64 = 1;
const TAG_ROLLOUT: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_REFERENCE: u64 = 4;
const TAG_EVAL: u64 = 5;

/// Slot number reserved for the center (unperturbed) evaluation so its
/// rollout seed can never collide with a population slot.
pub const CENTER_SLOT: u64 = u64::MAX;

/// Stream from which iteration `t` draws its noise-table offsets.
pub fn offsets_stream(run_seed: u64, iteration: u64) -> RngStream {
    RngStream::new(derive_seed(run_seed, &[TAG_OFFSETS, iteration]), 0)
}

/// Seed for the rollout evaluating the candidate at `slot` in
/// iteration `t`. Also used by remote workers, so scores do not depend
/// on which worker evaluates which slot.
pub fn rollout_seed(run_seed: u64, iteration: u64, slot: u64) -> u64 {
    derive_seed(run_seed, &[TAG_ROLLOUT, iteration, slot])
}

/// Stream for drawing the initial parameter vector.
pub fn init_stream(run_seed: u64) -> RngStream {
    RngStream::new(derive_seed(run_seed, &[TAG_INIT]), 0)
}

/// Seed for collecting the reference batch used by virtual batch
/// normalization. One per run: the batch is collected once and frozen.
pub fn reference_batch_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, &[TAG_REFERENCE])
}

/// Seed for rollout `k` of a post-training policy evaluation.
pub fn eval_rollout_seed(eval_seed: u64, rollout: u64) -> u64 {
    derive_seed(eval_seed, &[TAG_EVAL, rollout])
}
