//! Declarative description of one experiment: which algorithm, which
//! target, how long, and where the artifacts go. A config file plus the
//! code version pins a run completely; nothing about a run depends on
//! state outside this struct.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmarks::{BenchmarkKind, FunctionEvaluator};
use crate::canonical::CanonicalConfig;
use crate::envs::{EnvKind, EpisodeConfig, ObservationKind};
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::nes::NesConfig;
use crate::noise::DEFAULT_TABLE_LEN;
use crate::policy::{InputShape, Norm, PolicySpec, ReferenceStats};
use crate::rollout::PolicyEvaluator;
use crate::run::Budget;

/// Which search algorithm drives the run. The tag doubles as the
/// algorithm column in result tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum AlgorithmConfig {
    /// Rank-weighted recombination of the top offspring.
    Canonical(CanonicalConfig),
    /// Mirrored-sampling gradient estimate fed to Adam.
    Nes(NesConfig),
}

impl AlgorithmConfig {
    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmConfig::Canonical(_) => "canonical",
            AlgorithmConfig::Nes(_) => "nes",
        }
    }

    pub fn lambda(&self) -> usize {
        match self {
            AlgorithmConfig::Canonical(c) => c.lambda,
            AlgorithmConfig::Nes(c) => c.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AlgorithmConfig::Canonical(c) => c.validate(),
            AlgorithmConfig::Nes(c) => c.validate(),
        }
    }
}

/// What gets optimized: a closed-form benchmark function or a policy
/// acting in an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum TargetConfig {
    Benchmark {
        kind: BenchmarkKind,
        dim: usize,
        /// Every parameter starts at this value. Benchmarks measure
        /// convergence, so the start should be away from the optimum.
        #[serde(default)]
        start_value: f32,
        /// Observation noise scale; only the noisy benchmark reads it.
        #[serde(default = "default_noise_sigma")]
        noise_sigma: f32,
    },
    Policy {
        env: EnvKind,
        policy: PolicySpec,
        /// Defaults to the environment's standard episode protocol.
        #[serde(default)]
        episode: Option<EpisodeConfig>,
    },
}

fn default_noise_sigma() -> f32 {
    0.1
}

impl TargetConfig {
    /// Short name for the env column of result tables.
    pub fn label(&self) -> String {
        match self {
            TargetConfig::Benchmark { kind, .. } => {
                let name = serde_json::to_value(kind).expect("benchmark kind serializes");
                name.as_str().expect("benchmark kind is a string").to_owned()
            }
            TargetConfig::Policy { env, .. } => {
                let name = serde_json::to_value(env).expect("env kind serializes");
                name.as_str().expect("env kind is a string").to_owned()
            }
        }
    }

    pub fn dim(&self) -> Result<usize> {
        match self {
            TargetConfig::Benchmark { dim, .. } => Ok(*dim),
            TargetConfig::Policy { policy, .. } => policy.param_count(),
        }
    }

    pub fn episode(&self) -> Result<EpisodeConfig> {
        match self {
            TargetConfig::Benchmark { .. } => {
                Err(Error::invalid_config("benchmark targets have no episode protocol"))
            }
            TargetConfig::Policy { env, episode, .. } => {
                Ok(episode.unwrap_or_else(|| env.default_episode()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetConfig::Benchmark { dim, noise_sigma, start_value, .. } => {
                if *dim == 0 {
                    return Err(Error::invalid_config("benchmark dim must be positive"));
                }
                if !noise_sigma.is_finite() || *noise_sigma < 0.0 {
                    return Err(Error::invalid_config("noise_sigma must be finite and >= 0"));
                }
                if !start_value.is_finite() {
                    return Err(Error::invalid_config("start_value must be finite"));
                }
                Ok(())
            }
            TargetConfig::Policy { env, policy, episode } => {
                policy.validate()?;
                if let Some(e) = episode {
                    e.validate()?;
                }
                let compatible = match (env.observation_kind(), &policy.input) {
                    (
                        ObservationKind::Frame { .. },
                        InputShape::Image { height, width, channels },
                    ) => {
                        *height == crate::preprocess::FRAME_EDGE
                            && *width == crate::preprocess::FRAME_EDGE
                            && *channels == crate::preprocess::STACK_DEPTH
                    }
                    (ObservationKind::Vector { dim }, InputShape::Vector { dim: want }) => {
                        dim == *want
                    }
                    _ => false,
                };
                if !compatible {
                    return Err(Error::invalid_config(format!(
                        "policy input {:?} does not match observations of env {}",
                        policy.input,
                        self.label(),
                    )));
                }
                if policy.actions != env.action_count() {
                    return Err(Error::invalid_config(format!(
                        "policy has {} actions but env {} expects {}",
                        policy.actions,
                        self.label(),
                        env.action_count(),
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Self-contained recipe a worker can turn into an evaluator. Policy
/// variants carry the frozen normalization statistics, so every worker
/// normalizes identically without replaying the reference batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "evaluator", rename_all = "snake_case")]
pub enum EvaluatorSpec {
    Benchmark { kind: BenchmarkKind, dim: usize, noise_sigma: f32 },
    Policy { env: EnvKind, policy: PolicySpec, episode: EpisodeConfig, stats: ReferenceStats },
}

impl EvaluatorSpec {
    pub fn dim(&self) -> Result<usize> {
        match self {
            EvaluatorSpec::Benchmark { dim, .. } => Ok(*dim),
            EvaluatorSpec::Policy { policy, .. } => policy.param_count(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Evaluator>> {
        match self {
            EvaluatorSpec::Benchmark { kind, dim, noise_sigma } => {
                let mut f = FunctionEvaluator::new(*kind, *dim);
                f.noise_sigma = *noise_sigma;
                Ok(Box::new(f))
            }
            EvaluatorSpec::Policy { env, policy, episode, stats } => Ok(Box::new(
                PolicyEvaluator::new(policy.clone(), stats.clone(), *env, *episode)?,
            )),
        }
    }

    /// Opaque form carried in the run setup handed to workers.
    pub fn to_value(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self).map_err(Error::from)
    }

    pub fn from_value(value: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(value.clone())
            .map_err(|e| Error::invalid_config(format!("bad evaluator description: {e}")))
    }
}

/// True when the policy has normalization layers and therefore needs a
/// reference batch before any forward pass.
pub fn needs_reference_stats(spec: &PolicySpec) -> bool {
    spec.layers.iter().any(|l| l.norm != Norm::Off)
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_table_seed() -> u64 {
    1234
}

fn default_table_len() -> usize {
    DEFAULT_TABLE_LEN
}

fn default_eval_rollouts() -> u32 {
    30
}

/// Intermediate budget when the config leaves it out: whichever of
/// 200 iterations or 2e6 frames comes first.
pub fn default_budget_a() -> Budget {
    Budget { iterations: Some(200), frames: Some(2_000_000), wall_seconds: None }
}

/// Final budget when the config leaves it out; five times the
/// intermediate one in both limits.
pub fn default_budget_b() -> Budget {
    Budget { iterations: Some(1000), frames: Some(10_000_000), wall_seconds: None }
}

/// One experiment: train per seed to an intermediate budget, snapshot
/// and evaluate, continue to the final budget, snapshot and evaluate
/// again, then rank the seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Directory name under `out_dir`; also the id tying master and
    /// workers together.
    pub run_id: String,
    pub algorithm: AlgorithmConfig,
    pub target: TargetConfig,
    /// First snapshot point. Cumulative, so it must not exceed
    /// `budget_b` in any set limit.
    #[serde(default = "default_budget_a")]
    pub budget_a: Budget,
    /// Final stopping rule.
    #[serde(default = "default_budget_b")]
    pub budget_b: Budget,
    /// One independent training run per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_table_seed")]
    pub table_seed: u64,
    #[serde(default = "default_table_len")]
    pub table_len: usize,
    /// Episodes per post-training evaluation.
    #[serde(default = "default_eval_rollouts")]
    pub eval_rollouts: u32,
    /// Runs a grid of parent counts for the recombination algorithm:
    /// one sub-run per value, run ids suffixed with `-muNN`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_grid: Option<Vec<usize>>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(Error::invalid_config(
                "run_id must be non-empty and use only [A-Za-z0-9._-]",
            ));
        }
        self.algorithm.validate()?;
        self.target.validate()?;
        self.budget_a.validate()?;
        self.budget_b.validate()?;
        for (a, b, name) in [
            (self.budget_a.iterations, self.budget_b.iterations, "iterations"),
            (self.budget_a.frames, self.budget_b.frames, "frames"),
        ] {
            if let (Some(a), Some(b)) = (a, b) {
                if a > b {
                    return Err(Error::invalid_config(format!(
                        "budget_a {name} exceeds budget_b"
                    )));
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid_config("at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::invalid_config("seeds must be distinct"));
        }
        if self.eval_rollouts == 0 {
            return Err(Error::invalid_config("eval_rollouts must be positive"));
        }
        let dim = self.target.dim()?;
        if self.table_len < dim {
            return Err(Error::invalid_config(format!(
                "noise table length {} is smaller than the parameter dimension {dim}",
                self.table_len,
            )));
        }
        if let Some(grid) = &self.mu_grid {
            let AlgorithmConfig::Canonical(c) = &self.algorithm else {
                return Err(Error::invalid_config(
                    "mu_grid only applies to the recombination algorithm",
                ));
            };
            if grid.is_empty() {
                return Err(Error::invalid_config("mu_grid must not be empty"));
            }
            for &mu in grid {
                let probe = CanonicalConfig { mu, ..*c };
                probe.validate()?;
            }
        }
        Ok(())
    }

    /// Expands the parent-count grid into independent configs. Without
    /// a grid the config comes back unchanged.
    pub fn expand_mu_grid(&self) -> Result<Vec<RunConfig>> {
        self.validate()?;
        let Some(grid) = &self.mu_grid else {
            return Ok(vec![self.clone()]);
        };
        let AlgorithmConfig::Canonical(base) = &self.algorithm else {
            unreachable!("validate rejects mu_grid on other algorithms");
        };
        Ok(grid
            .iter()
            .map(|&mu| {
                let mut cfg = self.clone();
                cfg.run_id = format!("{}-mu{mu}", self.run_id);
                cfg.algorithm = AlgorithmConfig::Canonical(CanonicalConfig { mu, ..*base });
                cfg.mu_grid = None;
                cfg
            })
            .collect())
    }

    /// Evaluator recipe for this config's target. `stats` carries the
    /// frozen normalization statistics for policy targets; benchmark
    /// targets ignore it.
    pub fn evaluator_spec(&self, stats: &ReferenceStats) -> Result<EvaluatorSpec> {
        match &self.target {
            TargetConfig::Benchmark { kind, dim, noise_sigma, .. } => {
                Ok(EvaluatorSpec::Benchmark {
                    kind: *kind,
                    dim: *dim,
                    noise_sigma: *noise_sigma,
                })
            }
            TargetConfig::Policy { env, policy, .. } => Ok(EvaluatorSpec::Policy {
                env: *env,
                policy: policy.clone(),
                episode: self.target.episode()?,
                stats: stats.clone(),
            }),
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid_config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::invalid_config(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(Error::from)
    }
}
