//! Episode rollout protocol: random no-op prefix, action repetition
//! with flicker-removing observation, frame stacking, unclipped reward
//! accumulation, and a decision cap.
//!
//! A rollout seed splits into an environment seed and a protocol
//! stream, so a (seed, parameters) pair fully determines the episode.

use crate::envs::{Environment, EnvKind, EpisodeConfig, Observation};
use crate::error::{Error, Result};
use crate::eval::{Evaluation, Evaluator};
use crate::policy::{forward, select_action, PolicyInput, PolicySpec, ReferenceStats};
use crate::preprocess::{process_frame, FrameStack, RawFrame};
use crate::rng::{derive_seed, RngStream};
use crate::vector::ParamVector;
use rand::Rng;

/// States in a reference batch for normalization statistics.
pub const REFERENCE_BATCH: usize = 128;

const ENV_SEED_TAG: u64 = 1;
const PROTOCOL_SEED_TAG: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutResult {
    /// Unclipped reward total over the policy's decisions.
    pub reward: f64,
    /// Agent decisions taken.
    pub steps: u64,
    /// Raw environment steps consumed, including the no-op prefix.
    pub frames: u64,
    /// True when the decision cap ended the episode.
    pub capped: bool,
}

/// Runs one episode. The no-op count is drawn uniformly from
/// 0..=max_noops; no-op rewards are discarded. Each decision repeats
/// its action for `frame_skip` raw steps; frame observations take the
/// pixel max of the last two raw frames before preprocessing.
pub fn episode_rollout(
    spec: &PolicySpec,
    params: &ParamVector,
    stats: &ReferenceStats,
    env: &mut dyn Environment,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<RolloutResult> {
    cfg.validate()?;
    let mut protocol = RngStream::new(derive_seed(seed, &[PROTOCOL_SEED_TAG]), 0);
    let noops = protocol.random_range(0..=cfg.max_noops);
    let first = env.reset(derive_seed(seed, &[ENV_SEED_TAG]))?;
    match first {
        Observation::Frame(frame) => {
            rollout_frames(spec, params, stats, env, cfg, noops, frame)
        }
        Observation::Vector(obs) => rollout_vector(spec, params, stats, env, cfg, noops, obs),
    }
}

fn rollout_frames(
    spec: &PolicySpec,
    params: &ParamVector,
    stats: &ReferenceStats,
    env: &mut dyn Environment,
    cfg: &EpisodeConfig,
    noops: u64,
    first: RawFrame,
) -> Result<RolloutResult> {
    let mut prev = first.clone();
    let mut cur = first;
    let mut frames = 0u64;
    for _ in 0..noops {
        let step = env.step(0).map_err(|e| partial(0.0, e))?;
        frames += 1;
        let Observation::Frame(f) = step.observation else {
            return Err(Error::runtime("frame env emitted a vector observation"));
        };
        prev = std::mem::replace(&mut cur, f);
        if step.done {
            return Ok(RolloutResult { reward: 0.0, steps: 0, frames, capped: false });
        }
    }
    let mut stack = FrameStack::new();
    let mut state = stack.push(process_frame(&cur, &prev)?)?;
    let mut reward = 0.0;
    let mut steps = 0u64;
    loop {
        if steps >= cfg.max_steps {
            return Ok(RolloutResult { reward, steps, frames, capped: true });
        }
        let scores = forward(spec, params, stats, &PolicyInput::Image(state.clone()))?;
        let action = select_action(&scores)?;
        steps += 1;
        let mut done = false;
        for _ in 0..cfg.frame_skip {
            let step = env.step(action).map_err(|e| partial(reward, e))?;
            frames += 1;
            reward += step.reward;
            let Observation::Frame(f) = step.observation else {
                return Err(Error::runtime("frame env emitted a vector observation"));
            };
            prev = std::mem::replace(&mut cur, f);
            if step.done {
                done = true;
                break;
            }
        }
        if done {
            return Ok(RolloutResult { reward, steps, frames, capped: false });
        }
        state = stack.push(process_frame(&cur, &prev)?)?;
    }
}

fn rollout_vector(
    spec: &PolicySpec,
    params: &ParamVector,
    stats: &ReferenceStats,
    env: &mut dyn Environment,
    cfg: &EpisodeConfig,
    noops: u64,
    first: Vec<f32>,
) -> Result<RolloutResult> {
    let mut obs = first;
    let mut frames = 0u64;
    for _ in 0..noops {
        let step = env.step(0).map_err(|e| partial(0.0, e))?;
        frames += 1;
        let Observation::Vector(v) = step.observation else {
            return Err(Error::runtime("vector env emitted a frame observation"));
        };
        obs = v;
        if step.done {
            return Ok(RolloutResult { reward: 0.0, steps: 0, frames, capped: false });
        }
    }
    let mut reward = 0.0;
    let mut steps = 0u64;
    loop {
        if steps >= cfg.max_steps {
            return Ok(RolloutResult { reward, steps, frames, capped: true });
        }
        let scores = forward(spec, params, stats, &PolicyInput::Vector(obs.clone()))?;
        let action = select_action(&scores)?;
        steps += 1;
        let mut done = false;
        for _ in 0..cfg.frame_skip {
            let step = env.step(action).map_err(|e| partial(reward, e))?;
            frames += 1;
            reward += step.reward;
            let Observation::Vector(v) = step.observation else {
                return Err(Error::runtime("vector env emitted a frame observation"));
            };
            obs = v;
            if step.done {
                done = true;
                break;
            }
        }
        if done {
            return Ok(RolloutResult { reward, steps, frames, capped: false });
        }
    }
}

fn partial(reward: f64, e: Error) -> Error {
    Error::runtime(format!("environment fault with partial reward {reward}: {e}"))
}

/// Gathers states under uniformly random play, keeping each visited
/// state with probability 1% until `count` are collected; episodes
/// restart as needed. States go through the same preprocessing the
/// policy sees.
pub fn collect_reference_batch(
    env: &mut dyn Environment,
    cfg: &EpisodeConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<PolicyInput>> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::invalid_config("reference batch count must be positive"));
    }
    let actions = env.action_count();
    let mut rng = RngStream::new(derive_seed(seed, &[PROTOCOL_SEED_TAG]), 0);
    let mut episode = 0u64;
    let mut saved = Vec::with_capacity(count);
    while saved.len() < count {
        let env_seed = derive_seed(seed, &[ENV_SEED_TAG, episode]);
        episode += 1;
        match env.reset(env_seed)? {
            Observation::Frame(first) => {
                let mut prev = first.clone();
                let mut cur = first;
                let mut stack = FrameStack::new();
                let mut state = stack.push(process_frame(&cur, &prev)?)?;
                'episode: loop {
                    if rng.random::<f64>() < 0.01 {
                        saved.push(PolicyInput::Image(state.clone()));
                        if saved.len() == count {
                            break 'episode;
                        }
                    }
                    let action = rng.random_range(0..actions);
                    for _ in 0..cfg.frame_skip {
                        let step = env.step(action)?;
                        let Observation::Frame(f) = step.observation else {
                            return Err(Error::runtime(
                                "frame env emitted a vector observation",
                            ));
                        };
                        prev = std::mem::replace(&mut cur, f);
                        if step.done {
                            break 'episode;
                        }
                    }
                    state = stack.push(process_frame(&cur, &prev)?)?;
                }
            }
            Observation::Vector(first) => {
                let mut obs = first;
                'vec_episode: loop {
                    if rng.random::<f64>() < 0.01 {
                        saved.push(PolicyInput::Vector(obs.clone()));
                        if saved.len() == count {
                            break 'vec_episode;
                        }
                    }
                    let action = rng.random_range(0..actions);
                    for _ in 0..cfg.frame_skip {
                        let step = env.step(action)?;
                        let Observation::Vector(v) = step.observation else {
                            return Err(Error::runtime(
                                "vector env emitted a frame observation",
                            ));
                        };
                        obs = v;
                        if step.done {
                            break 'vec_episode;
                        }
                    }
                }
            }
        }
    }
    Ok(saved)
}

/// Scores a parameter vector with one episode per evaluation call.
pub struct PolicyEvaluator {
    spec: PolicySpec,
    stats: ReferenceStats,
    env: EnvKind,
    episode: EpisodeConfig,
    dim: usize,
}

impl PolicyEvaluator {
    pub fn new(
        spec: PolicySpec,
        stats: ReferenceStats,
        env: EnvKind,
        episode: EpisodeConfig,
    ) -> Result<Self> {
        episode.validate()?;
        let dim = spec.param_count()?;
        Ok(PolicyEvaluator { spec, stats, env, episode, dim })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn stats(&self) -> &ReferenceStats {
        &self.stats
    }
}

impl Evaluator for PolicyEvaluator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, params: &ParamVector, seed: u64) -> Result<Evaluation> {
        let mut env = self.env.build();
        let result =
            episode_rollout(&self.spec, params, &self.stats, env.as_mut(), &self.episode, seed)?;
        Ok(Evaluation { score: result.reward, frames: result.frames })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ObservationKind, Step};
    use crate::policy::InputShape;

    /// Vector env scripted for protocol tests: +1 per raw step, records
    /// actions, optional bonus reward at one step, optional episode
    /// length.
    struct Recorder {
        actions: Vec<usize>,
        raw_steps: u64,
        length: Option<u64>,
        bonus_at: Option<(u64, f64)>,
        live: bool,
    }

    impl Recorder {
        fn new(length: Option<u64>) -> Self {
            Recorder { actions: Vec::new(), raw_steps: 0, length, bonus_at: None, live: false }
        }
    }

    impl Environment for Recorder {
        fn reset(&mut self, _seed: u64) -> Result<Observation> {
            self.raw_steps = 0;
            self.live = true;
            Ok(Observation::Vector(vec![1.0]))
        }

        fn step(&mut self, action: usize) -> Result<Step> {
            if !self.live {
                return Err(Error::runtime("finished"));
            }
            self.actions.push(action);
            self.raw_steps += 1;
            let mut reward = 1.0;
            if let Some((at, bonus)) = self.bonus_at {
                if self.raw_steps == at {
                    reward += bonus;
                }
            }
            let done = self.length.is_some_and(|n| self.raw_steps >= n);
            if done {
                self.live = false;
            }
            Ok(Step { observation: Observation::Vector(vec![1.0]), reward, done })
        }

        fn action_count(&self) -> usize {
            2
        }

        fn observation_kind(&self) -> ObservationKind {
            ObservationKind::Vector { dim: 1 }
        }
    }

    /// Single-input policy that always picks action 1.
    fn pick_one() -> (PolicySpec, ParamVector) {
        let spec = PolicySpec {
            input: InputShape::Vector { dim: 1 },
            layers: vec![crate::policy::Layer {
                kind: crate::policy::LayerKind::Dense { outputs: 2 },
                activation: crate::policy::Activation::None,
                norm: crate::policy::Norm::Off,
            }],
            actions: 2,
        };
        (spec, ParamVector::new(vec![0.0, 5.0]).unwrap())
    }

    fn no_noops() -> EpisodeConfig {
        EpisodeConfig { max_steps: 10, max_noops: 0, frame_skip: 1 }
    }

    #[test]
    fn cap_bounds_decisions_and_counts_rewards() {
        let (spec, params) = pick_one();
        let mut env = Recorder::new(None);
        let out = episode_rollout(
            &spec,
            &params,
            &ReferenceStats::empty(),
            &mut env,
            &no_noops(),
            3,
        )
        .unwrap();
        assert_eq!(out.reward, 10.0);
        assert_eq!(out.steps, 10);
        assert_eq!(out.frames, 10);
        assert!(out.capped);
        assert!(env.actions.iter().all(|&a| a == 1));
    }

    #[test]
    fn noop_prefix_plays_action_zero_and_discards_reward() {
        let (spec, params) = pick_one();
        // Find a seed whose no-op draw is positive.
        let cfg = EpisodeConfig { max_steps: 4, max_noops: 30, frame_skip: 1 };
        for seed in 0..50 {
            let mut env = Recorder::new(None);
            let out = episode_rollout(
                &spec,
                &params,
                &ReferenceStats::empty(),
                &mut env,
                &cfg,
                seed,
            )
            .unwrap();
            let noops = env.actions.iter().take_while(|&&a| a == 0).count() as u64;
            assert_eq!(out.frames, noops + out.steps);
            // Every post-prefix action is the policy's choice.
            assert!(env.actions.iter().skip(noops as usize).all(|&a| a == 1));
            // No-op rewards are not counted.
            assert_eq!(out.reward, out.steps as f64);
            if noops > 0 {
                return;
            }
        }
        panic!("no seed produced a positive no-op prefix");
    }

    #[test]
    fn noop_draw_is_uniform_over_the_range() {
        let cfg = EpisodeConfig { max_steps: 1, max_noops: 30, frame_skip: 1 };
        let (spec, params) = pick_one();
        let mut counts = [0u64; 31];
        for seed in 0..10_000u64 {
            let mut env = Recorder::new(None);
            episode_rollout(&spec, &params, &ReferenceStats::empty(), &mut env, &cfg, seed)
                .unwrap();
            let noops = env.actions.iter().take_while(|&&a| a == 0).count();
            counts[noops] += 1;
        }
        let expected = 10_000.0 / 31.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 30 degrees of freedom.
        assert!(chi2 < 59.703, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn frame_skip_repeats_and_sums() {
        let (spec, params) = pick_one();
        let cfg = EpisodeConfig { max_steps: 3, max_noops: 0, frame_skip: 4 };
        let mut env = Recorder::new(None);
        env.bonus_at = Some((6, 1000.0));
        let out = episode_rollout(
            &spec,
            &params,
            &ReferenceStats::empty(),
            &mut env,
            &cfg,
            0,
        )
        .unwrap();
        assert_eq!(out.steps, 3);
        assert_eq!(out.frames, 12);
        // 12 raw rewards plus the single unclipped bonus.
        assert_eq!(out.reward, 12.0 + 1000.0);
        assert!(out.capped);
    }

    #[test]
    fn termination_mid_skip_returns_immediately() {
        let (spec, params) = pick_one();
        let cfg = EpisodeConfig { max_steps: 10, max_noops: 0, frame_skip: 4 };
        let mut env = Recorder::new(Some(6));
        let out = episode_rollout(
            &spec,
            &params,
            &ReferenceStats::empty(),
            &mut env,
            &cfg,
            0,
        )
        .unwrap();
        // Raw step 6 ends inside the second skip window.
        assert_eq!(out.frames, 6);
        assert_eq!(out.steps, 2);
        assert_eq!(out.reward, 6.0);
        assert!(!out.capped);
    }

    #[test]
    fn rollouts_are_deterministic_per_seed() {
        let spec = PolicySpec::compact_frame(3);
        let params = crate::policy::init_params(&spec, 5).unwrap();
        let mut env = crate::envs::ToyFrame::new();
        let cfg = EpisodeConfig { max_steps: 50, max_noops: 30, frame_skip: 3 };
        let batch = collect_reference_batch(&mut env, &cfg, 40, 16).unwrap();
        let stats = crate::policy::freeze_reference_stats(&spec, &params, &batch).unwrap();
        let run = |seed| {
            let mut env = crate::envs::ToyFrame::new();
            episode_rollout(&spec, &params, &stats, &mut env, &cfg, seed).unwrap()
        };
        assert_eq!(run(11), run(11));
        let a = run(11);
        let b = run(12);
        // Different seeds draw different no-op prefixes almost always.
        assert!(a != b || run(13) != a);
    }

    #[test]
    fn reference_batch_is_sized_and_deterministic() {
        let cfg = EpisodeConfig { max_steps: 100, max_noops: 0, frame_skip: 3 };
        let mut env = crate::envs::ToyFrame::new();
        let batch = collect_reference_batch(&mut env, &cfg, 7, 32).unwrap();
        assert_eq!(batch.len(), 32);
        for state in &batch {
            let PolicyInput::Image(t) = state else {
                panic!("image state expected");
            };
            assert_eq!((t.height(), t.width(), t.channels()), (84, 84, 4));
        }
        let mut env2 = crate::envs::ToyFrame::new();
        let again = collect_reference_batch(&mut env2, &cfg, 7, 32).unwrap();
        assert_eq!(batch, again);
        let mut env3 = crate::envs::ToyFrame::new();
        let other = collect_reference_batch(&mut env3, &cfg, 8, 32).unwrap();
        assert_ne!(batch, other);
    }

    #[test]
    fn vector_reference_batch_collects_observations() {
        let cfg = EpisodeConfig { max_steps: 500, max_noops: 0, frame_skip: 1 };
        let mut env = crate::envs::CartPole::new();
        let batch = collect_reference_batch(&mut env, &cfg, 3, 16).unwrap();
        assert_eq!(batch.len(), 16);
        for state in &batch {
            let PolicyInput::Vector(v) = state else {
                panic!("vector state expected");
            };
            assert_eq!(v.len(), 4);
        }
    }

    #[test]
    fn policy_evaluator_scores_cartpole() {
        let spec = PolicySpec::mlp(4, &[32, 32], 2);
        let params = crate::policy::init_params(&spec, 1).unwrap();
        let eval = PolicyEvaluator::new(
            spec,
            ReferenceStats::empty(),
            EnvKind::CartPole,
            EnvKind::CartPole.default_episode(),
        )
        .unwrap();
        assert_eq!(eval.dim(), params.dim());
        let a = eval.evaluate(&params, 9).unwrap();
        let b = eval.evaluate(&params, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.score >= 1.0, "an episode always yields some reward");
        assert_eq!(a.score, a.frames as f64, "+1 per raw step with skip 1");
    }
}
