//! Pole balancing on a cart: push left or right each step, fail when
//! the pole tips past 12 degrees or the cart leaves the track.

use super::{Environment, Observation, ObservationKind, Step};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use rand::Rng;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
/// Half the pole length.
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE: f64 = 10.0;
/// Euler integration step, seconds.
const TAU: f64 = 0.02;
/// 12 degrees in radians.
const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
const X_LIMIT: f64 = 2.4;
const DEFAULT_CAP: u64 = 500;

/// State is (cart position, cart velocity, pole angle, pole angular
/// velocity); all four start uniform in (-0.05, 0.05).
pub struct CartPole {
    state: [f64; 4],
    steps: u64,
    cap: u64,
    live: bool,
}

impl CartPole {
    pub fn new() -> Self {
        CartPole { state: [0.0; 4], steps: 0, cap: DEFAULT_CAP, live: false }
    }

    /// Same dynamics with a shorter episode cap, for tests.
    pub fn with_cap(cap: u64) -> Self {
        CartPole { cap, ..CartPole::new() }
    }

    fn observation(&self) -> Observation {
        Observation::Vector(self.state.iter().map(|&v| v as f32).collect())
    }
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole::new()
    }
}

impl Environment for CartPole {
    fn reset(&mut self, seed: u64) -> Result<Observation> {
        let mut rng = RngStream::new(seed, 0);
        for v in &mut self.state {
            *v = rng.random_range(-0.05..0.05);
        }
        self.steps = 0;
        self.live = true;
        Ok(self.observation())
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if !self.live {
            return Err(Error::runtime("episode is finished; reset before stepping"));
        }
        if action >= 2 {
            return Err(Error::ActionOutOfRange { action, actions: 2 });
        }
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE } else { -FORCE };
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        self.steps += 1;
        let failed =
            self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        let done = failed || self.steps >= self.cap;
        if done {
            self.live = false;
        }
        Ok(Step { observation: self.observation(), reward: 1.0, done })
    }

    fn action_count(&self) -> usize {
        2
    }

    fn observation_kind(&self) -> ObservationKind {
        ObservationKind::Vector { dim: 4 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(env: &mut CartPole, seed: u64, actions: impl Iterator<Item = usize>) -> (f64, u64) {
        env.reset(seed).unwrap();
        let mut total = 0.0;
        let mut steps = 0;
        for a in actions {
            let s = env.step(a).unwrap();
            total += s.reward;
            steps += 1;
            if s.done {
                break;
            }
        }
        (total, steps)
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut env = CartPole::new();
        for seed in 0..50 {
            let Observation::Vector(obs) = env.reset(seed).unwrap() else {
                panic!("vector observation expected");
            };
            assert_eq!(obs.len(), 4);
            for v in obs {
                assert!(v.abs() < 0.05, "{v}");
            }
        }
        let a = env.reset(9).unwrap();
        let b = env.reset(9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let mut env = CartPole::new();
        let first = run(&mut env, 4, (0..).map(|i| i % 2));
        let second = run(&mut env, 4, (0..).map(|i| i % 2));
        assert_eq!(first, second);
    }

    #[test]
    fn alternating_pushes_survive_at_least_ten_steps() {
        let mut env = CartPole::new();
        for seed in 0..20 {
            let (_, steps) = run(&mut env, seed, (0..1000).map(|i| i % 2));
            assert!(steps >= 10, "seed {seed} fell after {steps} steps");
        }
    }

    #[test]
    fn constant_push_fails_on_the_angle() {
        let mut env = CartPole::new();
        env.reset(2).unwrap();
        let mut last = None;
        for _ in 0..1000 {
            let s = env.step(1).unwrap();
            let done = s.done;
            last = Some(s);
            if done {
                break;
            }
        }
        let last = last.unwrap();
        assert!(last.done);
        let Observation::Vector(obs) = last.observation else {
            panic!("vector observation expected");
        };
        assert!(obs[2].abs() as f64 > THETA_LIMIT, "theta {}", obs[2]);
        assert!((obs[0].abs() as f64) < X_LIMIT);
    }

    #[test]
    fn cap_ends_the_episode() {
        let mut env = CartPole::with_cap(3);
        let (total, steps) = run(&mut env, 0, (0..).map(|i| i % 2));
        assert_eq!(steps, 3);
        assert_eq!(total, 3.0);
    }

    #[test]
    fn stepping_when_finished_is_an_error() {
        let mut env = CartPole::with_cap(1);
        assert!(env.step(0).is_err(), "unstarted env must refuse");
        env.reset(0).unwrap();
        let s = env.step(0).unwrap();
        assert!(s.done);
        assert!(env.step(0).is_err());
        env.reset(0).unwrap();
        assert!(env.step(0).is_ok());
        let mut live = CartPole::new();
        live.reset(0).unwrap();
        assert!(live.step(2).is_err(), "action out of range");
    }
}
