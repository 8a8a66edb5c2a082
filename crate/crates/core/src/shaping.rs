//! Fitness shaping: normalized ranks and recombination weights.
//!
//! Both search algorithms consume scores only through order statistics,
//! which is what makes them indifferent to the scale of the reward
//! signal. This module holds the two shaping functions they share.

use crate::error::{Error, Result};
use crate::rng::det_ln;

/// Maps scores to ranks divided by the population size. The worst score
/// gets 0, the best gets `(n-1)/n`, so every value lies in `[0, 1)`.
/// Ties are broken by position: among equal scores the earlier element
/// receives the lower rank. The result depends only on the ordering of
/// the scores, never on their magnitudes.
pub fn normalized_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    for (rank, &idx) in order.iter().enumerate() {
        ranks[idx] = rank as f64 / n as f64;
    }
    ranks
}

/// Log-linear recombination weights for the top `mu` offspring:
/// `w_i = (ln(mu + 0.5) - ln i) / sum_j (ln(mu + 0.5) - ln j)` for
/// `i = 1..=mu`. Weights are positive, strictly decreasing, and sum to
/// one. The log is the crate's platform-deterministic implementation so
/// recombination is bit-stable across machines.
pub fn recombination_weights(mu: usize) -> Result<Vec<f64>> {
    if mu == 0 {
        return Err(Error::invalid_config("recombination needs at least one parent"));
    }
    let log_half = det_ln(mu as f64 + 0.5);
    let raw: Vec<f64> = (1..=mu).map(|i| log_half - det_ln(i as f64)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}
