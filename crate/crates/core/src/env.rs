//! Built-in continuous-control tasks.
//!
//! * `pendulum`: torque-limited swing-up, observation `(cos θ, sin θ, θ̇)`.
//! * `pointmass`: damped 2-D point driven toward the origin, observation `(p, v)`.
//!
//! Rewards are computed from the state before the step and the clipped
//! action. Neither task ever terminates; episodes are truncated at `max_steps`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvId {
    Pendulum,
    PointMass,
}

impl EnvId {
    pub const ALL: [EnvId; 2] = [EnvId::Pendulum, EnvId::PointMass];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Pendulum => "pendulum",
            EnvId::PointMass => "pointmass",
        }
    }

    pub fn spec(self) -> EnvSpec {
        EnvSpec::of(self)
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvId::Pendulum),
            "pointmass" => Ok(EnvId::PointMass),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Episode length `T`.
    pub max_steps: usize,
    /// Upper bound on any single reward.
    pub r_max: f64,
    pub dt: f64,
}

const PENDULUM_MAX_SPEED: f64 = 8.0;
const PENDULUM_G: f64 = 10.0;
const PENDULUM_M: f64 = 1.0;
const PENDULUM_L: f64 = 1.0;
const POINTMASS_DAMPING: f64 = 0.98;

impl EnvSpec {
    pub fn of(id: EnvId) -> Self {
        match id {
            EnvId::Pendulum => EnvSpec {
                id,
                obs_dim: 3,
                act_dim: 1,
                action_low: vec![-2.0],
                action_high: vec![2.0],
                max_steps: 200,
                r_max: 0.0,
                dt: 0.05,
            },
            EnvId::PointMass => EnvSpec {
                id,
                obs_dim: 4,
                act_dim: 2,
                action_low: vec![-1.0, -1.0],
                action_high: vec![1.0, 1.0],
                max_steps: 100,
                r_max: 0.0,
                dt: 0.1,
            },
        }
    }

    pub fn action_range(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(l, h)| h - l)
            .collect()
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&l, &h))| a.clamp(l, h))
            .collect()
    }

    /// `r_max * T`, the largest achievable episode return.
    pub fn max_return(&self) -> f64 {
        self.r_max * self.max_steps as f64
    }

    /// Single-line description used in dataset headers and logs.
    pub fn summary(&self) -> String {
        format!(
            "{} obs_dim={} act_dim={} low={:?} high={:?} T={} r_max={} dt={}",
            self.id,
            self.obs_dim,
            self.act_dim,
            self.action_low,
            self.action_high,
            self.max_steps,
            self.r_max,
            self.dt
        )
    }
}

/// One environment step as stored in datasets and replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    /// Absorbing termination only; never set for time-limit truncation.
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Physics {
    Pendulum { theta: f64, theta_dot: f64 },
    PointMass { pos: [f64; 2], vel: [f64; 2] },
}

/// Live episode state.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    physics: Physics,
    steps: usize,
    finished: bool,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        PI
    } else {
        y
    }
}

impl Env {
    /// Starts an episode. Pendulum: `θ ~ U(-π, π)`, `θ̇ ~ U(-1, 1)`.
    /// Point mass: `p ~ U([-1, 1]²)`, `v = 0`.
    pub fn reset(spec: &EnvSpec, seed: u64) -> (Env, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let physics = match spec.id {
            EnvId::Pendulum => Physics::Pendulum {
                theta: rng.random_range(-PI..PI),
                theta_dot: rng.random_range(-1.0..1.0),
            },
            EnvId::PointMass => Physics::PointMass {
                pos: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                vel: [0.0, 0.0],
            },
        };
        let env = Env {
            spec: spec.clone(),
            physics,
            steps: 0,
            finished: false,
        };
        let obs = env.observe();
        (env, obs)
    }

    /// Starts an episode from an explicit physical state:
    /// `[θ, θ̇]` for the pendulum, `[px, py, vx, vy]` for the point mass.
    pub fn from_state(spec: &EnvSpec, state: &[f64]) -> Result<Env> {
        let physics = match (spec.id, state) {
            (EnvId::Pendulum, &[theta, theta_dot]) => Physics::Pendulum { theta, theta_dot },
            (EnvId::PointMass, &[px, py, vx, vy]) => Physics::PointMass {
                pos: [px, py],
                vel: [vx, vy],
            },
            _ => {
                return Err(Error::Shape(format!(
                    "state of length {} does not fit {}",
                    state.len(),
                    spec.id
                )))
            }
        };
        Ok(Env {
            spec: spec.clone(),
            physics,
            steps: 0,
            finished: false,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn state(&self) -> Vec<f64> {
        match self.physics {
            Physics::Pendulum { theta, theta_dot } => vec![theta, theta_dot],
            Physics::PointMass { pos, vel } => vec![pos[0], pos[1], vel[0], vel[1]],
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        match self.physics {
            Physics::Pendulum { theta, theta_dot } => vec![theta.cos(), theta.sin(), theta_dot],
            Physics::PointMass { pos, vel } => vec![pos[0], pos[1], vel[0], vel[1]],
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        if action.len() != self.spec.act_dim {
            return Err(Error::Shape(format!(
                "action has {} entries, {} expects {}",
                action.len(),
                self.spec.id,
                self.spec.act_dim
            )));
        }
        let a = self.spec.clip_action(action);
        let dt = self.spec.dt;
        let reward = match &mut self.physics {
            Physics::Pendulum { theta, theta_dot } => {
                let u = a[0];
                let th = wrap_angle(*theta);
                let reward = -(th * th + 0.1 * *theta_dot * *theta_dot + 0.001 * u * u);
                let accel = 3.0 * PENDULUM_G / (2.0 * PENDULUM_L) * theta.sin()
                    + 3.0 * u / (PENDULUM_M * PENDULUM_L * PENDULUM_L);
                *theta_dot = (*theta_dot + accel * dt).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
                *theta += *theta_dot * dt;
                reward
            }
            Physics::PointMass { pos, vel } => {
                let dist = (pos[0] * pos[0] + pos[1] * pos[1]).sqrt();
                let reward = -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
                for i in 0..2 {
                    vel[i] = POINTMASS_DAMPING * (vel[i] + a[i] * dt);
                    pos[i] += vel[i] * dt;
                }
                reward
            }
        };
        self.steps += 1;
        let truncated = self.steps >= self.spec.max_steps;
        self.finished = truncated;
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            terminal: false,
            truncated,
        })
    }
}

/// Undiscounted sum of rewards.
pub fn episode_return(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn env_ids_round_trip_and_unknown_rejected() {
        for id in EnvId::ALL {
            assert_eq!(id.as_str().parse::<EnvId>().unwrap(), id);
        }
        assert!(matches!("hopper".parse::<EnvId>(), Err(Error::UnknownEnv(_))));
    }

    #[test]
    fn specs_are_valid() {
        for id in EnvId::ALL {
            let s = id.spec();
            assert!(s.action_low.iter().zip(&s.action_high).all(|(l, h)| l < h));
            assert!(s.max_steps >= 1);
            assert_eq!(s.action_low.len(), s.act_dim);
            assert!(s.summary().starts_with(id.as_str()));
        }
    }

    #[test]
    fn reset_distributions_and_determinism() {
        let spec = EnvId::Pendulum.spec();
        for seed in 0..200 {
            let (env, obs) = Env::reset(&spec, seed);
            let (again, obs2) = Env::reset(&spec, seed);
            assert_eq!(obs, obs2);
            assert_eq!(env.state(), again.state());
            let s = env.state();
            assert!(s[0] >= -PI && s[0] < PI && s[1].abs() <= 1.0);
            assert_eq!(env.steps(), 0);
        }
        let spec = EnvId::PointMass.spec();
        for seed in 0..200 {
            let (env, _) = Env::reset(&spec, seed);
            let s = env.state();
            assert!(s[0].abs() <= 1.0 && s[1].abs() <= 1.0);
            assert_eq!(&s[2..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn pendulum_equilibria() {
        let spec = EnvId::Pendulum.spec();
        let mut env = Env::from_state(&spec, &[0.0, 0.0]).unwrap();
        let out = env.step(&[0.0]).unwrap();
        assert_eq!(env.state(), vec![0.0, 0.0]);
        assert_eq!(out.reward, 0.0);

        let mut env = Env::from_state(&spec, &[PI, 0.0]).unwrap();
        let out = env.step(&[0.0]).unwrap();
        // sin(π) is 1.2e-16 in floating point; θ̇ stays ~0
        assert!(env.state()[1].abs() < 1e-13);
        assert!((out.reward + PI * PI).abs() < 1e-12);
        assert!((out.reward - (-9.8696)).abs() < 1e-4);
    }

    #[test]
    fn pendulum_step_matches_hand_evaluation() {
        let spec = EnvId::Pendulum.spec();
        let mut env = Env::from_state(&spec, &[1.0, 0.5]).unwrap();
        let out = env.step(&[3.0]).unwrap(); // clipped to 2
        let accel = 15.0 * 1f64.sin() + 6.0;
        let td = 0.5 + accel * 0.05;
        assert!((env.state()[1] - td).abs() < 1e-15);
        assert!((env.state()[0] - (1.0 + td * 0.05)).abs() < 1e-15);
        assert!((out.reward + (1.0 + 0.1 * 0.25 + 0.001 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn pointmass_equilibrium_and_truncation() {
        let spec = EnvId::PointMass.spec();
        let mut env = Env::from_state(&spec, &[0.0, 0.0, 0.0, 0.0]).unwrap();
        for t in 1..=spec.max_steps {
            let out = env.step(&[0.0, 0.0]).unwrap();
            assert_eq!(out.reward, 0.0);
            assert!(!out.terminal);
            assert_eq!(out.truncated, t == spec.max_steps);
        }
        assert_eq!(env.state(), vec![0.0; 4]);
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn episode_return_sums() {
        assert_eq!(episode_return(&[]), 0.0);
        assert_eq!(episode_return(&[1.0, 2.0, 3.0]), 6.0);
    }

    #[test]
    fn zero_policy_episode_from_bottom_matches_step_oracle() {
        // Oracle: re-simulate the stated dynamics inline and sum rewards.
        let spec = EnvId::Pendulum.spec();
        let mut env = Env::from_state(&spec, &[PI, 0.0]).unwrap();
        let mut rewards = Vec::new();
        while !env.is_finished() {
            rewards.push(env.step(&[0.0]).unwrap().reward);
        }
        let (mut th, mut thd, mut oracle) = (PI, 0.0f64, 0.0);
        for _ in 0..200 {
            let w = wrap_angle(th);
            oracle -= w * w + 0.1 * thd * thd;
            thd = (thd + 15.0 * th.sin() * 0.05).clamp(-8.0, 8.0);
            th += thd * 0.05;
        }
        assert_eq!(rewards.len(), 200);
        assert!((episode_return(&rewards) - oracle).abs() < 1e-9);
        assert!((episode_return(&rewards) + 200.0 * PI * PI).abs() < 1.0);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rewards_bounded_and_clipping_is_idempotent(
            seed in 0u64..10_000,
            pend in proptest::bool::ANY,
            actions in proptest::collection::vec(-10.0f64..10.0, 40),
        ) {
            let spec = if pend { EnvId::Pendulum.spec() } else { EnvId::PointMass.spec() };
            let (mut a_env, _) = Env::reset(&spec, seed);
            let mut b_env = a_env.clone();
            for chunk in actions.chunks(spec.act_dim) {
                if chunk.len() < spec.act_dim { break; }
                let ra = a_env.step(chunk).unwrap();
                let rb = b_env.step(&spec.clip_action(chunk)).unwrap();
                prop_assert!(ra.reward <= spec.r_max);
                prop_assert_eq!(ra, rb);
            }
        }
    }
}
