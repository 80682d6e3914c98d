//! Deterministic environments behind a small value-type MDP interface.
//!
//! Environments hold only immutable configuration; all mutable episode data lives in
//! the `State` values passed through [`Env::step`], so any number of rollouts can run
//! concurrently on one environment instance.

mod maze;
mod push;

pub use maze::{corridor_class, CorridorClass, MazeConfig, MazeEnv, MazeState, Obstacle};
pub use push::{PushConfig, PushEnv, PushState};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub episode_len: usize,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult<S> {
    pub next_state: S,
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Features `φ` of `next_state`.
    pub features: Vec<f64>,
    pub done: bool,
    pub collision: bool,
}

pub trait Env: Send + Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;

    fn spec(&self) -> EnvSpec;
    fn reset(&self, seed: u64, jitter: bool) -> Self::State;
    fn observe(&self, state: &Self::State) -> Vec<f64>;
    fn features(&self, state: &Self::State) -> Vec<f64>;
    /// Timestep of `state` (number of steps taken so far).
    fn time(&self, state: &Self::State) -> usize;
    fn step(&self, state: &Self::State, action: &[f64]) -> Result<StepResult<Self::State>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Online,
    Offline,
}

/// One environment step. `features` are those of `s_next`, matching the reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r_ext: f64,
    pub features: Vec<f64>,
    pub s_next: Vec<f64>,
    pub z: usize,
    pub done: bool,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    /// Undiscounted sum of step rewards.
    pub ret: f64,
    /// `(1/T) Σ_t φ(s_t)` over the visited states.
    pub mean_features: Vec<f64>,
    pub collisions: usize,
}

impl Rollout {
    /// Per-step feature sequence.
    pub fn feature_seq(&self) -> Vec<Vec<f64>> {
        self.transitions.iter().map(|t| t.features.clone()).collect()
    }
}

/// Runs a full episode, asking `policy` for the action at every observation.
pub fn rollout<E, P>(env: &E, mut policy: P, seed: u64, jitter: bool, skill: usize, origin: Origin) -> Result<Rollout>
where
    E: Env,
    P: FnMut(usize, &[f64]) -> Vec<f64>,
{
    let spec = env.spec();
    let mut state = env.reset(seed, jitter);
    let mut obs = env.observe(&state);
    let mut transitions = Vec::with_capacity(spec.episode_len);
    let mut ret = 0.0;
    let mut feature_sum = vec![0.0; spec.feature_dim];
    let mut collisions = 0;
    loop {
        let t = env.time(&state);
        let action = policy(t, &obs);
        let step = env.step(&state, &action)?;
        ret += step.reward;
        for (acc, f) in feature_sum.iter_mut().zip(&step.features) {
            *acc += f;
        }
        collisions += usize::from(step.collision);
        transitions.push(Transition {
            s: obs,
            a: action,
            r_ext: step.reward,
            features: step.features,
            s_next: step.observation.clone(),
            z: skill,
            done: step.done,
            origin,
        });
        obs = step.observation;
        state = step.next_state;
        if step.done {
            break;
        }
    }
    let len = transitions.len() as f64;
    let mean_features = feature_sum.into_iter().map(|f| f / len).collect();
    Ok(Rollout { transitions, ret, mean_features, collisions })
}

/// Rolls out a fixed action sequence (`episode_len × action_dim`).
pub fn rollout_open_loop<E: Env>(
    env: &E,
    actions: ArrayView2<'_, f64>,
    seed: u64,
    jitter: bool,
    skill: usize,
) -> Result<Rollout> {
    let spec = env.spec();
    if actions.nrows() != spec.episode_len || actions.ncols() != spec.action_dim {
        return Err(invalid(format!(
            "open-loop trajectory must be {}x{}, got {}x{}",
            spec.episode_len,
            spec.action_dim,
            actions.nrows(),
            actions.ncols()
        )));
    }
    rollout(env, |t, _| actions.row(t).to_vec(), seed, jitter, skill, Origin::Offline)
}
