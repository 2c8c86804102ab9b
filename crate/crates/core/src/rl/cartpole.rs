//! Classic cart-pole with a third "stay" action.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.8;
pub const MASS_CART: f64 = 1.0;
pub const MASS_POLE: f64 = 0.1;
pub const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
pub const HALF_LENGTH: f64 = 0.5;
pub const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const X_LIMIT: f64 = 2.4;
pub const MAX_EPISODE_STEPS: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn in_bounds(&self) -> bool {
        self.x.abs() <= X_LIMIT && self.theta.abs() <= THETA_LIMIT
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Stay,
    Right,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Left, Action::Stay, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Stay => 1,
            Action::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Usage(format!("action index {i} out of range")))
    }

    pub fn force(self) -> f64 {
        match self {
            Action::Left => -FORCE_MAG,
            Action::Stay => 0.0,
            Action::Right => FORCE_MAG,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Left => "left",
            Action::Stay => "stay",
            Action::Right => "right",
        })
    }
}

impl FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Action::Left),
            "stay" => Ok(Action::Stay),
            "right" => Ok(Action::Right),
            _ => Err(Error::Config(format!("unknown action '{s}'"))),
        }
    }
}

fn draw_state<R: Rng>(rng: &mut R) -> CartPoleState {
    let mut u = || rng.random_range(-0.05..=0.05);
    CartPoleState {
        x: u(),
        x_dot: u(),
        theta: u(),
        theta_dot: u(),
    }
}

/// Initial state with each component uniform on `[-0.05, 0.05]`.
pub fn env_reset(seed: u64) -> CartPoleState {
    draw_state(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// One Euler step of the dynamics, with no termination logic.
pub fn dynamics(s: &CartPoleState, a: Action) -> CartPoleState {
    let force = a.force();
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * s.theta_dot * s.theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    CartPoleState {
        x: s.x + TAU * s.x_dot,
        x_dot: s.x_dot + TAU * x_acc,
        theta: s.theta + TAU * s.theta_dot,
        theta_dot: s.theta_dot + TAU * theta_acc,
    }
}

/// Result of [`CartPole::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: CartPoleState,
    pub reward: f64,
    pub done: bool,
    /// True when the episode ended only because of the step limit.
    pub truncated: bool,
}

/// Episode-tracking environment. Reward is `+1` for every step taken.
#[derive(Debug, Clone)]
pub struct CartPole {
    state: CartPoleState,
    steps: u32,
    done: bool,
    max_steps: u32,
    rng: ChaCha8Rng,
}

impl CartPole {
    pub fn new(seed: u64, max_steps: u32) -> Self {
        Self::from_rng(ChaCha8Rng::seed_from_u64(seed), max_steps)
    }

    /// Environment drawing its initial states from `rng`.
    pub fn from_rng(mut rng: ChaCha8Rng, max_steps: u32) -> Self {
        let state = draw_state(&mut rng);
        Self {
            state,
            steps: 0,
            done: false,
            max_steps,
            rng,
        }
    }

    /// Starts a new episode from the environment's own stream.
    pub fn reset(&mut self) -> CartPoleState {
        self.state = draw_state(&mut self.rng);
        self.steps = 0;
        self.done = false;
        self.state
    }

    /// Places the system in an arbitrary state, alive, at step 0.
    pub fn set_state(&mut self, s: CartPoleState) {
        self.state = s;
        self.steps = 0;
        self.done = false;
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, a: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage(
                "cannot step a finished episode; call reset".into(),
            ));
        }
        self.state = dynamics(&self.state, a);
        self.steps += 1;
        let failed = !self.state.in_bounds();
        let truncated = !failed && self.steps >= self.max_steps;
        self.done = failed || truncated;
        Ok(StepOutcome {
            state: self.state,
            reward: 1.0,
            done: self.done,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_seeded_and_small() {
        assert_eq!(env_reset(7), env_reset(7));
        for seed in 0..100 {
            let s = env_reset(seed);
            assert!(s.to_vec().iter().all(|v| v.abs() <= 0.05));
        }
        let states: Vec<_> = (0..100).map(env_reset).collect();
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                assert_ne!(states[i], states[j]);
            }
        }
    }

    #[test]
    fn upright_stays_upright() {
        let mut s = CartPoleState::default();
        for _ in 0..500 {
            s = dynamics(&s, Action::Stay);
        }
        assert!(s.theta.abs() <= 1e-15);
        assert_eq!(s.x, 0.0);
    }

    #[test]
    fn one_push_right_hand_transcription() {
        // at rest: sin 0 = 0, cos 0 = 1
        let temp = 10.0 / 1.1;
        let theta_acc = (0.0 - temp) / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        let s = dynamics(&CartPoleState::default(), Action::Right);
        assert_eq!(s.x, 0.0);
        assert_eq!(s.theta, 0.0);
        assert!((s.x_dot - 0.02 * x_acc).abs() < 1e-15);
        assert!((s.theta_dot - 0.02 * theta_acc).abs() < 1e-15);
        assert!((s.x_dot - 0.195122).abs() < 1e-6);
    }

    #[test]
    fn tilted_state_ends_episode() {
        let mut env = CartPole::new(0, MAX_EPISODE_STEPS);
        env.set_state(CartPoleState {
            theta: 13f64.to_radians(),
            ..Default::default()
        });
        let out = env.step(Action::Stay).unwrap();
        assert!(out.done && !out.truncated);
        assert!(matches!(env.step(Action::Stay), Err(Error::Usage(_))));
    }

    #[test]
    fn step_limit_truncates() {
        let mut env = CartPole::new(0, 3);
        env.set_state(CartPoleState::default());
        for i in 0..3 {
            let out = env.step(Action::Stay).unwrap();
            assert_eq!(out.done, i == 2);
        }
        assert!(env.is_done());
    }

    #[test]
    fn action_tags() {
        for a in Action::ALL {
            assert_eq!(a.to_string().parse::<Action>().unwrap(), a);
            assert_eq!(Action::from_index(a.index()).unwrap(), a);
        }
        assert!(Action::from_index(3).is_err());
    }
}
