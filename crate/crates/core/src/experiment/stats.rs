//! Post-training evaluation and run comparison.
//!
//! Evaluation replays a fixed number of rollouts with per-rollout seeds
//! derived from one base seed, so a report is reproducible from
//! `(params, base seed)` alone. Comparison uses the Mann-Whitney U rank
//! test: scores from episodic environments are heavily tied and far
//! from normal, so a rank test is the honest default.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::distrib::params_hash;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::seeds;
use crate::vector::ParamVector;

/// Scores of one parameter vector over repeated evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Hash of the evaluated parameters, for tying reports to
    /// checkpoints.
    pub params_ref: String,
    /// Base seed the per-rollout seeds were derived from.
    pub base_seed: u64,
    /// Rollouts attempted.
    pub n_rollouts: u32,
    /// Rollouts that produced a score; failures are excluded from the
    /// statistics rather than imputed.
    pub n_effective: u32,
    /// Scores of the successful rollouts, in rollout order.
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n-1); zero when fewer than two
    /// scores.
    pub std: f64,
    /// Frames consumed by the successful rollouts.
    pub frames: u64,
}

/// Runs `rollouts` independent evaluations of `params`. Rollout `r`
/// uses a seed derived from `(base_seed, r)`, so reports are
/// reproducible and rollouts never share episode randomness.
pub fn evaluate_params(
    evaluator: &dyn Evaluator,
    params: &ParamVector,
    base_seed: u64,
    rollouts: u32,
) -> Result<EvalReport> {
    if rollouts == 0 {
        return Err(Error::invalid_config("evaluation needs at least one rollout"));
    }
    if params.dim() != evaluator.dim() {
        return Err(Error::DimensionMismatch { expected: evaluator.dim(), got: params.dim() });
    }
    let mut scores = Vec::with_capacity(rollouts as usize);
    let mut frames = 0u64;
    for r in 0..rollouts {
        let seed = seeds::eval_rollout_seed(base_seed, r as u64);
        match evaluator.evaluate(params, seed) {
            Ok(eval) => {
                scores.push(eval.score);
                frames += eval.frames;
            }
            Err(err) => {
                log::warn!("evaluation rollout {r} failed, excluding it: {err}");
            }
        }
    }
    let (mean, std) = mean_std(&scores);
    Ok(EvalReport {
        params_ref: params_hash(params.as_slice()),
        base_seed,
        n_rollouts: rollouts,
        n_effective: scores.len() as u32,
        scores,
        mean,
        std,
        frames,
    })
}

/// Mean and sample standard deviation; both zero for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Outcome of a two-sided Mann-Whitney U test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UTest {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Whether the exact permutation distribution was used, as opposed
    /// to the tie-corrected normal approximation.
    pub exact: bool,
}

/// Exact enumeration is used when the smaller sample has at most this
/// many observations and the subset count stays enumerable.
const EXACT_MAX_SMALLER: usize = 8;
const EXACT_MAX_SUBSETS: f64 = 5e6;

/// Two-sided Mann-Whitney U test of `a` against `b`. Ties get midranks.
/// Small samples use the exact permutation distribution of U under
/// exchangeability (ties included); larger ones the normal
/// approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<UTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid_config("both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid_config("samples must be finite"));
    }
    let n = a.len();
    let m = b.len();
    let ranks = midranks(a, b);
    let r_a: f64 = ranks[..n].iter().sum();
    let u = r_a - (n * (n + 1)) as f64 / 2.0;

    let total = binomial(n + m, n.min(m));
    if n.min(m) <= EXACT_MAX_SMALLER && total <= EXACT_MAX_SUBSETS {
        let p = exact_p(&ranks, n, u);
        return Ok(UTest { u, p, exact: true });
    }

    let nm = (n * m) as f64;
    let big_n = (n + m) as f64;
    let tie_sum: f64 = tie_group_sizes(&ranks).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nm / 12.0 * (big_n + 1.0 - tie_sum / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        // Every observation tied: U is constant, nothing to detect.
        return Ok(UTest { u, p: 1.0, exact: false });
    }
    let diff = u - nm / 2.0;
    let z = (diff.abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal exists");
    let p = (2.0 * normal.cdf(-z)).min(1.0);
    Ok(UTest { u, p, exact: false })
}

/// Ranks of the pooled samples (`a` then `b`), 1-based, ties averaged.
fn midranks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // Positions start..end (0-based) share the average 1-based rank.
        let mid = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = mid;
        }
        start = end;
    }
    ranks
}

/// Sizes of the tie groups in a midrank vector.
fn tie_group_sizes(ranks: &[f64]) -> Vec<usize> {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        sizes.push(end - start);
        start = end;
    }
    sizes
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Exact two-sided p: the fraction of the C(n+m, n) equally likely
/// assignments of pooled ranks to the first sample whose U deviates
/// from the null mean at least as much as the observed one. Ranks stay
/// as midranks, so ties shape the permutation distribution too.
fn exact_p(ranks: &[f64], n: usize, u_obs: f64) -> f64 {
    let total = ranks.len();
    let nm = (n * (total - n)) as f64;
    // Midranks are multiples of 1/2; a quarter-unit slack keeps the
    // threshold comparison free of float-sum noise.
    let threshold = (u_obs - nm / 2.0).abs() - 0.25;
    let offset = (n * (n + 1)) as f64 / 2.0;
    let mut count = 0u64;
    let mut total_count = 0u64;
    let mut chosen = Vec::with_capacity(n);
    subsets(ranks, n, 0, 0.0, &mut chosen, &mut |rank_sum| {
        total_count += 1;
        if (rank_sum - offset - nm / 2.0).abs() >= threshold {
            count += 1;
        }
    });
    count as f64 / total_count as f64
}

fn subsets(
    ranks: &[f64],
    want: usize,
    from: usize,
    sum: f64,
    chosen: &mut Vec<f64>,
    visit: &mut impl FnMut(f64),
) {
    if chosen.len() == want {
        visit(sum);
        return;
    }
    let remaining = want - chosen.len();
    for i in from..=ranks.len() - remaining {
        chosen.push(ranks[i]);
        subsets(ranks, want, i + 1, sum + ranks[i], chosen, visit);
        chosen.pop();
    }
}

/// Side-by-side comparison of two evaluation reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
    pub test: UTest,
    /// True when p < 0.05.
    pub significant: bool,
    /// "a", "b", or "-" when the difference is not significant.
    pub better: String,
}

pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    let test = mann_whitney_u(&a.scores, &b.scores)?;
    let significant = test.p < 0.05;
    let better = if !significant {
        "-".to_owned()
    } else if a.mean >= b.mean {
        "a".to_owned()
    } else {
        "b".to_owned()
    };
    Ok(Comparison {
        mean_a: a.mean,
        std_a: a.std,
        mean_b: b.mean,
        std_b: b.std,
        test,
        significant,
        better,
    })
}
