//! Synthetic frame game: a target falls from the top of a 210x160
//! screen and a paddle near the bottom tries to intercept it.
//!
//! The target sprite is drawn only on even-numbered frames, so any
//! observer that looks at single frames misses it half the time; the
//! pixel max over two consecutive frames always sees it. Catching the
//! target scores +1 and respawns it at a seeded random column.

use super::{Environment, Observation, ObservationKind, Step};
use crate::error::{Error, Result};
use crate::preprocess::RawFrame;
use crate::rng::RngStream;
use rand::Rng;

pub const HEIGHT: usize = 210;
pub const WIDTH: usize = 160;

/// Paddle geometry keeps it inside the rows that survive the resize
/// crop (raw rows roughly 25..185 stay visible).
const PADDLE_TOP: i64 = 170;
const PADDLE_HEIGHT: i64 = 10;
const PADDLE_WIDTH: i64 = 24;
/// Pixels the paddle moves per raw step.
const PADDLE_SPEED: i64 = 2;

const TARGET_SIZE: i64 = 16;
/// Pixels the target falls per raw step.
const TARGET_SPEED: i64 = 2;
const SPAWN_Y: i64 = 30;

/// Raw steps per episode.
const EPISODE_STEPS: u64 = 600;

/// Actions: 0 stay, 1 move left, 2 move right.
pub struct ToyFrame {
    paddle_x: i64,
    target_x: i64,
    target_y: i64,
    /// Raw frames emitted since reset; parity controls target
    /// visibility.
    frame_index: u64,
    raw_steps: u64,
    rng: RngStream,
    live: bool,
}

impl ToyFrame {
    pub fn new() -> Self {
        ToyFrame {
            paddle_x: 0,
            target_x: 0,
            target_y: 0,
            frame_index: 0,
            raw_steps: 0,
            rng: RngStream::new(0, 0),
            live: false,
        }
    }

    fn spawn_target(&mut self) {
        self.target_x = self.rng.random_range(0..=(WIDTH as i64 - TARGET_SIZE));
        self.target_y = SPAWN_Y;
    }

    fn render(&self) -> RawFrame {
        let mut frame = RawFrame::filled(HEIGHT, WIDTH, [0, 0, 0]).expect("fixed shape");
        frame.fill_rect(
            PADDLE_TOP..PADDLE_TOP + PADDLE_HEIGHT,
            self.paddle_x..self.paddle_x + PADDLE_WIDTH,
            [255, 255, 255],
        );
        if self.frame_index % 2 == 0 {
            frame.fill_rect(
                self.target_y..self.target_y + TARGET_SIZE,
                self.target_x..self.target_x + TARGET_SIZE,
                [255, 255, 255],
            );
        }
        frame
    }

    /// Current target column, for scripted policies in tests.
    pub fn target_x(&self) -> i64 {
        self.target_x
    }

    /// Current paddle column, for scripted policies in tests.
    pub fn paddle_x(&self) -> i64 {
        self.paddle_x
    }
}

impl Default for ToyFrame {
    fn default() -> Self {
        ToyFrame::new()
    }
}

impl Environment for ToyFrame {
    fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.rng = RngStream::new(seed, 0);
        self.paddle_x = (WIDTH as i64 - PADDLE_WIDTH) / 2;
        self.frame_index = 0;
        self.raw_steps = 0;
        self.live = true;
        self.spawn_target();
        Ok(Observation::Frame(self.render()))
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if !self.live {
            return Err(Error::runtime("episode is finished; reset before stepping"));
        }
        if action >= 3 {
            return Err(Error::ActionOutOfRange { action, actions: 3 });
        }
        match action {
            1 => self.paddle_x -= PADDLE_SPEED,
            2 => self.paddle_x += PADDLE_SPEED,
            _ => {}
        }
        self.paddle_x = self.paddle_x.clamp(0, WIDTH as i64 - PADDLE_WIDTH);
        self.target_y += TARGET_SPEED;
        let mut reward = 0.0;
        if self.target_y + TARGET_SIZE >= PADDLE_TOP {
            let overlap = self.target_x < self.paddle_x + PADDLE_WIDTH
                && self.paddle_x < self.target_x + TARGET_SIZE;
            if overlap {
                reward = 1.0;
            }
            self.spawn_target();
        }
        self.frame_index += 1;
        self.raw_steps += 1;
        let done = self.raw_steps >= EPISODE_STEPS;
        if done {
            self.live = false;
        }
        Ok(Step { observation: Observation::Frame(self.render()), reward, done })
    }

    fn action_count(&self) -> usize {
        3
    }

    fn observation_kind(&self) -> ObservationKind {
        ObservationKind::Frame { height: HEIGHT, width: WIDTH }
    }
}
