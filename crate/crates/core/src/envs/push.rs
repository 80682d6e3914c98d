//! Quasi-static planar pushing: a disk pusher under velocity control shoves a puck
//! across a frictionless table. Stand-in for cube pushing.
//!
//! Contact is resolved by translating the puck along the contact normal until the
//! disks just touch. Reward `5·(δ_t − δ_{t−1}) + 0.01·(1 − tanh‖puck − pusher‖²)` with
//! `δ_t` the puck's distance from its start.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Env, EnvSpec, StepResult};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PushConfig {
    pub pusher_start: [f64; 2],
    pub puck_start: [f64; 2],
    pub pusher_radius: f64,
    pub puck_radius: f64,
    pub step_size: f64,
    /// Pusher position bound (the puck is unconstrained).
    pub bound: f64,
    pub puck_jitter: f64,
    pub episode_len: usize,
}

impl Default for PushConfig {
    fn default() -> Self {
        Self {
            pusher_start: [0.0, 0.0],
            puck_start: [0.25, 0.0],
            pusher_radius: 0.05,
            puck_radius: 0.05,
            step_size: 0.03,
            bound: 1.0,
            puck_jitter: 0.05,
            episode_len: 100,
        }
    }
}

impl PushConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pusher_radius <= 0.0 || self.puck_radius <= 0.0 {
            return Err(invalid("push: radii must be positive"));
        }
        if self.step_size <= 0.0 || self.episode_len == 0 || self.bound <= 0.0 {
            return Err(invalid("push: step_size, bound and episode_len must be positive"));
        }
        if self.step_size >= self.pusher_radius + self.puck_radius {
            return Err(invalid("push: step_size must be below the contact distance"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PushState {
    pub pusher: [f64; 2],
    pub puck: [f64; 2],
    pub puck0: [f64; 2],
    pub t: usize,
}

#[derive(Clone, Debug)]
pub struct PushEnv {
    cfg: PushConfig,
}

impl PushEnv {
    pub fn new(cfg: PushConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &PushConfig {
        &self.cfg
    }

    fn contact_distance(&self) -> f64 {
        self.cfg.pusher_radius + self.cfg.puck_radius
    }
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

impl Env for PushEnv {
    type State = PushState;

    fn spec(&self) -> EnvSpec {
        EnvSpec { obs_dim: 7, action_dim: 2, episode_len: self.cfg.episode_len, feature_dim: 2 }
    }

    fn reset(&self, seed: u64, jitter: bool) -> PushState {
        let mut puck = self.cfg.puck_start;
        if jitter {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j = self.cfg.puck_jitter;
            puck[0] += rng.random_range(-j..=j);
            puck[1] += rng.random_range(-j..=j);
        }
        PushState { pusher: self.cfg.pusher_start, puck, puck0: puck, t: 0 }
    }

    fn observe(&self, s: &PushState) -> Vec<f64> {
        let rel = sub(s.puck, s.pusher);
        let phase = s.t as f64 / self.cfg.episode_len as f64;
        vec![s.pusher[0], s.pusher[1], s.puck[0], s.puck[1], rel[0], rel[1], phase]
    }

    fn features(&self, s: &PushState) -> Vec<f64> {
        s.puck.to_vec()
    }

    fn time(&self, s: &PushState) -> usize {
        s.t
    }

    fn step(&self, s: &PushState, action: &[f64]) -> Result<StepResult<PushState>> {
        if s.t >= self.cfg.episode_len {
            return Err(Error::EpisodeFinished(s.t));
        }
        if action.len() != 2 {
            return Err(invalid(format!("push action must have 2 entries, got {}", action.len())));
        }
        let b = self.cfg.bound;
        let motion = [self.cfg.step_size * action[0].clamp(-1.0, 1.0), self.cfg.step_size * action[1].clamp(-1.0, 1.0)];
        let pusher = [(s.pusher[0] + motion[0]).clamp(-b, b), (s.pusher[1] + motion[1]).clamp(-b, b)];
        let mut puck = s.puck;
        let reach = self.contact_distance();
        let rel = sub(puck, pusher);
        let d = norm(rel);
        let contact = d < reach;
        if contact {
            let normal = if d > 1e-12 {
                [rel[0] / d, rel[1] / d]
            } else {
                let m = norm(motion).max(1e-12);
                [motion[0] / m, motion[1] / m]
            };
            puck = [pusher[0] + normal[0] * reach, pusher[1] + normal[1] * reach];
        }
        let delta_prev = norm(sub(s.puck, s.puck0));
        let delta = norm(sub(puck, s.puck0));
        let gap = norm(sub(puck, pusher));
        let reward = 5.0 * (delta - delta_prev) + 0.01 * (1.0 - (gap * gap).tanh());
        let t = s.t + 1;
        let next = PushState { pusher, puck, puck0: s.puck0, t };
        Ok(StepResult {
            observation: self.observe(&next),
            features: self.features(&next),
            next_state: next,
            reward,
            done: t == self.cfg.episode_len,
            collision: false,
        })
    }
}
