//! Environment contract and the built-in desk-scale environments.
//!
//! Every environment declares its action count and observation kind,
//! resets deterministically from a seed, and refuses to step once an
//! episode has finished. Action index 0 is the no-op in every
//! built-in environment.

mod cartpole;
mod toyframe;

pub use cartpole::CartPole;
pub use toyframe::ToyFrame;

use crate::error::{Error, Result};
use crate::preprocess::RawFrame;
use serde::{Deserialize, Serialize};

/// What an environment emits each step.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    Frame(RawFrame),
    Vector(Vec<f32>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObservationKind {
    Frame { height: usize, width: usize },
    Vector { dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    /// Starts a fresh episode; the trajectory is a pure function of
    /// the seed and the subsequent actions.
    fn reset(&mut self, seed: u64) -> Result<Observation>;
    /// Advances one raw step. Stepping a finished or unstarted episode
    /// is an error.
    fn step(&mut self, action: usize) -> Result<Step>;
    fn action_count(&self) -> usize;
    fn observation_kind(&self) -> ObservationKind;
}

/// Episode protocol constants: decision cap, random no-op prefix
/// bound, and how many raw frames each action repeats for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: u64,
    pub max_noops: u64,
    pub frame_skip: u32,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { max_steps: 25_000, max_noops: 30, frame_skip: 4 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::invalid_config("max_steps must be at least 1"));
        }
        if self.frame_skip == 0 {
            return Err(Error::invalid_config("frame_skip must be at least 1"));
        }
        Ok(())
    }
}

/// Built-in environment selector, used in run configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    CartPole,
    ToyFrame,
}

impl EnvKind {
    pub fn build(&self) -> Box<dyn Environment> {
        match self {
            EnvKind::CartPole => Box::new(CartPole::new()),
            EnvKind::ToyFrame => Box::new(ToyFrame::new()),
        }
    }

    /// Episode protocol suited to the environment: the frame env uses
    /// an odd skip so single-frame observations alternate flicker
    /// parity, the control env needs no no-ops or skipping.
    pub fn default_episode(&self) -> EpisodeConfig {
        match self {
            EnvKind::CartPole => EpisodeConfig { max_steps: 500, max_noops: 0, frame_skip: 1 },
            EnvKind::ToyFrame => EpisodeConfig { max_steps: 25_000, max_noops: 30, frame_skip: 3 },
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            EnvKind::CartPole => 2,
            EnvKind::ToyFrame => 3,
        }
    }

    /// Shape of the observations `build()` will emit, without
    /// constructing the environment.
    pub fn observation_kind(&self) -> ObservationKind {
        match self {
            EnvKind::CartPole => ObservationKind::Vector { dim: 4 },
            EnvKind::ToyFrame => ObservationKind::Frame {
                height: toyframe::HEIGHT,
                width: toyframe::WIDTH,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_config_validation() {
        assert!(EpisodeConfig::default().validate().is_ok());
        assert!(EpisodeConfig { max_steps: 0, ..Default::default() }.validate().is_err());
        assert!(EpisodeConfig { frame_skip: 0, ..Default::default() }.validate().is_err());
        let json = serde_json::to_string(&EpisodeConfig::default()).unwrap();
        let back: EpisodeConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, EpisodeConfig::default());
    }

    #[test]
    fn kinds_build_matching_contracts() {
        for kind in [EnvKind::CartPole, EnvKind::ToyFrame] {
            let env = kind.build();
            assert_eq!(env.action_count(), kind.action_count());
            kind.default_episode().validate().unwrap();
        }
        assert_eq!(serde_json::to_string(&EnvKind::ToyFrame).unwrap(), "\"toy_frame\"");
    }
}
